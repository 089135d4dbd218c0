//! Error metrics against a known truth and the pass/fail lines of a report.

use std::fmt;

use crate::field::{dilate, InclusionGeometry, ScalarField};
use crate::least_gradient::{ComponentLabel, ReconstructionResult};

/// `‖u - r‖₂ / ‖r‖₂` over nodes in `mask` where both are defined.
pub fn relative_l2(u: &ScalarField, reference: &ScalarField, mask: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..u.grid.len() {
        if let (true, Some(a), Some(b)) = (mask[k], u.get(k), reference.get(k)) {
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// `max |u - r| / |r|` over nodes in `mask` where both are defined.
pub fn relative_linf(u: &ScalarField, reference: &ScalarField, mask: &[bool]) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..u.grid.len() {
        if let (true, Some(a), Some(b)) = (mask[k], u.get(k), reference.get(k)) {
            worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
        }
    }
    worst
}

pub fn jaccard(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// One inclusion of the true geometry and the recovered component that
/// overlaps it best.
#[derive(Debug, Clone)]
pub struct InclusionMatch {
    pub perfect: bool,
    pub label: Option<ComponentLabel>,
    pub jaccard: f64,
}

impl InclusionMatch {
    pub fn expected_label(&self) -> ComponentLabel {
        if self.perfect {
            ComponentLabel::Perfect
        } else {
            ComponentLabel::Insulating
        }
    }
}

/// Reconstruction errors against the generating potential and conductivity.
#[derive(Debug, Clone)]
pub struct InversionMetrics {
    /// Relative L² error of `u` off a two-node dilation of U.
    pub u_rel_err: f64,
    /// Relative L∞ error of `σ` off a two-node dilation of the degenerate set.
    pub sigma_rel_err: f64,
    pub matches: Vec<InclusionMatch>,
    /// Recovered components not matched to any inclusion.
    pub spurious: usize,
}

impl InversionMetrics {
    pub fn compute(
        geo: &InclusionGeometry,
        exact_u: &ScalarField,
        exact_sigma: &ScalarField,
        res: &ReconstructionResult,
    ) -> Self {
        let g = geo.grid;
        let u_collar = dilate(&g, &geo.u_mask, 2);
        let off_u: Vec<bool> = (0..g.len())
            .map(|k| geo.omega[k] && !geo.v_mask[k] && !u_collar[k])
            .collect();
        let z_collar = dilate(&g, &res.decomposition.degenerate_mask(), 2);
        let off_z: Vec<bool> = (0..g.len()).map(|k| geo.omega[k] && !z_collar[k]).collect();

        let comps: Vec<Vec<bool>> = res
            .decomposition
            .components
            .iter()
            .map(|c| {
                let mut m = vec![false; g.len()];
                for &k in &c.nodes {
                    m[k] = true;
                }
                m
            })
            .collect();
        let mut used = vec![false; comps.len()];
        let mut matches = Vec::new();
        let inclusions = geo
            .u_components
            .iter()
            .map(|c| (true, c))
            .chain(geo.v_components.iter().map(|c| (false, c)));
        for (perfect, nodes) in inclusions {
            let mut m = vec![false; g.len()];
            for &k in nodes {
                m[k] = true;
            }
            let best = comps
                .iter()
                .enumerate()
                .map(|(i, c)| (i, jaccard(c, &m)))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            let (label, jac) = match best {
                Some((i, j)) if j > 0.0 => {
                    used[i] = true;
                    (Some(res.decomposition.components[i].label), j)
                }
                _ => (None, 0.0),
            };
            matches.push(InclusionMatch {
                perfect,
                label,
                jaccard: jac,
            });
        }
        Self {
            u_rel_err: relative_l2(&res.u, exact_u, &off_u),
            sigma_rel_err: relative_linf(&res.sigma, exact_sigma, &off_z),
            matches,
            spurious: used.iter().filter(|u| !**u).count(),
        }
    }
}

/// One `metric=value condition: PASS|FAIL` line.
#[derive(Debug, Clone)]
pub struct Check {
    pub metric: String,
    pub value: String,
    pub condition: String,
    pub passed: bool,
}

impl Check {
    /// `value ≤ bound`; `bound_text` is printed verbatim.
    pub fn at_most(metric: &str, value: f64, bound: f64, bound_text: &str) -> Self {
        Self {
            metric: metric.into(),
            value: format!("{value:.6e}"),
            condition: format!("{metric}<={bound_text}"),
            passed: value <= bound,
        }
    }

    pub fn at_least(metric: &str, value: f64, bound: f64, bound_text: &str) -> Self {
        Self {
            metric: metric.into(),
            value: format!("{value:.6e}"),
            condition: format!("{metric}>={bound_text}"),
            passed: value >= bound,
        }
    }

    pub fn equals(metric: &str, value: impl fmt::Display, expected: impl fmt::Display) -> Self {
        let (value, expected) = (value.to_string(), expected.to_string());
        Self {
            metric: metric.into(),
            condition: format!("{metric}=={expected}"),
            passed: value == expected,
            value,
        }
    }

    pub fn holds(metric: &str, passed: bool) -> Self {
        Self {
            metric: metric.into(),
            value: passed.to_string(),
            condition: format!("{metric}==true"),
            passed,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}={} {}: {}",
            self.metric,
            self.value,
            self.condition,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Report text, one check per line.
pub fn report(checks: &[Check]) -> String {
    checks.iter().map(|c| format!("{c}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;

    #[test]
    fn norms_and_overlap() {
        let g = Grid::new(3, 3, 1.0, (0.0, 0.0)).unwrap();
        let r = ScalarField::constant(g, 2.0);
        let mut u = r.clone();
        u.values[4] = 3.0;
        let all = vec![true; 9];
        assert!((relative_l2(&u, &r, &all) - (1.0f64 / 36.0).sqrt()).abs() < 1e-15);
        assert_eq!(relative_linf(&u, &r, &all), 0.5);
        let mut off = all.clone();
        off[4] = false;
        assert_eq!(relative_linf(&u, &r, &off), 0.0);
        let a = [true, true, false, false];
        let b = [false, true, true, false];
        assert!((jaccard(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn check_lines() {
        let c = Check::at_most("sigma_rel_err", 0.03, 0.10, "0.10");
        assert_eq!(
            c.to_string(),
            "sigma_rel_err=3.000000e-2 sigma_rel_err<=0.10: PASS"
        );
        assert!(!Check::at_least("fraction", 0.5, 0.95, "0.95").passed);
        assert_eq!(
            Check::equals("label", "perfect", "perfect").to_string(),
            "label=perfect label==perfect: PASS"
        );
    }
}
