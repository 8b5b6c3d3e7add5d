use serde::Serialize;

use super::{derive_coeffs, gamma_is_two, predicted_rate, DerivedCoeffs, RateParams};

/// Values with magnitude at most this are treated as zero in sign tests.
pub const SIGN_BAND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Neg,
    Zero,
    Pos,
}

impl Sign {
    pub fn of(v: f64) -> Sign {
        if v.abs() <= SIGN_BAND {
            Sign::Zero
        } else if v < 0.0 {
            Sign::Neg
        } else {
            Sign::Pos
        }
    }

    pub fn is_nonpositive(self) -> bool {
        self != Sign::Pos
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CaseLabel {
    /// `max(K1, K2) <= 0`: `H` is nonincreasing.
    Case1,
    /// `K1 <= 0 < K2`.
    Case2_1,
    /// `K1 > 0 >= K2`.
    Case2_2,
    /// `min(K1, K2) > 0`.
    Case2_3,
    /// gamma = 2 with kappa^2 >= 2: K1 > 0 for every alpha > 0.
    Degenerate,
}

impl CaseLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseLabel::Case1 => "Case1",
            CaseLabel::Case2_1 => "Case2_1",
            CaseLabel::Case2_2 => "Case2_2",
            CaseLabel::Case2_3 => "Case2_3",
            CaseLabel::Degenerate => "Degenerate",
        }
    }

    /// The label implied by the three signs alone.
    pub fn from_signs(k1: Sign, k2: Sign) -> CaseLabel {
        match (k1.is_nonpositive(), k2.is_nonpositive()) {
            (true, true) => CaseLabel::Case1,
            (true, false) => CaseLabel::Case2_1,
            (false, true) => CaseLabel::Case2_2,
            (false, false) => CaseLabel::Case2_3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub case_label: CaseLabel,
    pub predicted_rate: f64,
    pub k1_sign: Sign,
    pub k2_sign: Sign,
    pub xi_sign: Sign,
    pub theta: f64,
    pub coeffs: DerivedCoeffs,
    /// Label read off the interval table with its own `alpha_1 <= alpha_2`
    /// convention, when the parameters fall in a tabulated interval.
    pub table_label: Option<CaseLabel>,
    pub notes: Vec<String>,
}

impl RegimeReport {
    /// `false` when the interval table disagrees with direct sign evaluation.
    pub fn table_agrees(&self) -> Option<bool> {
        self.table_label.map(|l| l == self.case_label)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let c = &self.coeffs;
        let roots: Vec<f64> = c.alpha_lo.into_iter().chain(c.alpha_hi).collect();
        serde_json::json!({
            "case": self.case_label.as_str(),
            "rate": self.predicted_rate,
            "s": c.s,
            "xi": c.xi,
            "theta": self.theta,
            "p": c.p,
            "K1": c.k1,
            "K2": c.k2,
            "alpha_tilde": c.alpha_tilde,
            "D1": c.d1,
            "roots": roots,
            "signs": { "K1": self.k1_sign, "K2": self.k2_sign, "xi": self.xi_sign },
            "table_case": self.table_label.map(|l| l.as_str()),
            "table_agrees": self.table_agrees(),
            "notes": self.notes,
        })
    }
}

/// Classify by direct evaluation of K1, K2 and xi.
pub fn classify_regime(params: &RateParams) -> RegimeReport {
    let coeffs = derive_coeffs(params);
    let k1_sign = Sign::of(coeffs.k1);
    let k2_sign = Sign::of(coeffs.k2);
    let xi_sign = Sign::of(coeffs.xi);
    let mut notes = Vec::new();

    let case_label = if gamma_is_two(params.gamma) && params.kappa_squared >= 2.0 {
        notes.push(format!(
            "gamma = 2 with kappa^2 = {} >= 2 leaves no alpha > 0 with K1 <= 0; \
             scale the constraints by 1/kappa as a preprocessing step",
            params.kappa_squared
        ));
        CaseLabel::Degenerate
    } else {
        CaseLabel::from_signs(k1_sign, k2_sign)
    };

    let table = if params.theta_is_default() {
        table_label(params.gamma, params.kappa_squared, params.alpha)
    } else {
        None
    };
    if let Some(t) = table {
        if t != case_label {
            notes.push(format!(
                "interval table gives {} but direct evaluation gives {} (K1 = {:e}, K2 = {:e})",
                t.as_str(),
                case_label.as_str(),
                coeffs.k1,
                coeffs.k2
            ));
        }
    }

    RegimeReport {
        case_label,
        predicted_rate: predicted_rate(params.alpha, params.gamma),
        k1_sign,
        k2_sign,
        xi_sign,
        theta: params.theta,
        coeffs,
        table_label: table,
        notes,
    }
}

/// The interval sign table, with `alpha_1 = v + sqrt(D1)/(g(g-2))`,
/// `alpha_2 = v - sqrt(D1)/(g(g-2))` and `v = alpha_tilde (g-1)/(g-2)`.
/// Returns `None` outside every tabulated interval. Documentation only:
/// classification uses direct sign evaluation.
pub fn table_label(gamma: f64, kappa2: f64, alpha: f64) -> Option<CaseLabel> {
    let at = 2.0 * (gamma + 2.0) / gamma;
    if gamma_is_two(gamma) {
        if kappa2 >= 2.0 {
            return None;
        }
        let edge = -2.0 * (kappa2 - 2.0);
        return Some(if alpha <= edge {
            CaseLabel::Case1
        } else if alpha < 4.0 {
            CaseLabel::Case2_2
        } else if alpha == 4.0 {
            CaseLabel::Case2_1
        } else {
            CaseLabel::Case2_3
        });
    }
    let gg = gamma * (gamma - 2.0);
    let d1 = 2.0 * (gamma + 2.0).powi(2) * (kappa2 * gg + 2.0);
    let threshold = -2.0 / gg;
    let vertex = at * (gamma - 1.0) / (gamma - 2.0);
    if gamma > 2.0 {
        if alpha <= at {
            return Some(CaseLabel::Case1);
        }
        if kappa2 < threshold {
            return Some(CaseLabel::Case2_1);
        }
        let root = d1.max(0.0).sqrt() / gg;
        let (a1, a2) = (vertex + root, vertex - root);
        return Some(if alpha > a1 && alpha < a2 {
            CaseLabel::Case2_3
        } else {
            CaseLabel::Case2_1
        });
    }
    // gamma in [1, 2)
    let degenerate_point = gamma == 1.0 && kappa2 == threshold;
    if kappa2 <= threshold && !degenerate_point {
        let a2 = vertex - d1.max(0.0).sqrt() / gg;
        if alpha <= a2 {
            Some(CaseLabel::Case1)
        } else if alpha < at {
            Some(CaseLabel::Case2_2)
        } else if alpha > at {
            Some(CaseLabel::Case2_3)
        } else {
            None
        }
    } else if kappa2 > threshold {
        if alpha < at {
            Some(CaseLabel::Case2_2)
        } else if alpha > at {
            Some(CaseLabel::Case2_3)
        } else {
            None
        }
    } else {
        None
    }
}
