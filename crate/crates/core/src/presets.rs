//! Named test configurations used by the command line and the test suites.

use std::fmt;
use std::str::FromStr;

use crate::error::{CdiiError, Result};
use crate::field::{build_geometry, BoundaryTrace, InclusionSpec, ScalarField, Shape};
use crate::forward::{solve_limit, Contrast, ForwardProblem};
use crate::synthesis::{example_phantom, synthesize_magnitude, AdmissiblePair, Extension};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Unit disc, square conductor, `σ = 1/(4 max(|x|,|y|))`, `f = cos 2θ`.
    DiskExample,
    /// `σ ≡ 1` on the unit square with `f = x`.
    NoInclusion,
    /// `[-1,1]²` with an insulating disc of radius 0.3 and `f = x`.
    InsulatorDisc,
    /// `[-1,1]²`, conducting disc left, insulating disc right, `f = x + y/2`.
    TwoInclusions,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::DiskExample,
        Preset::NoInclusion,
        Preset::InsulatorDisc,
        Preset::TwoInclusions,
    ];

    /// Limit (`K = ∞`) forward problem at resolution `n`.
    pub fn problem(self, n: usize) -> Result<ForwardProblem> {
        let square = Shape::Rect {
            min: (-1.0, -1.0),
            max: (1.0, 1.0),
        };
        let (domain, inclusions, f): (Shape, Vec<InclusionSpec>, fn(f64, f64) -> f64) = match self {
            Preset::DiskExample => return Ok(example_phantom(n)?.problem),
            Preset::NoInclusion => (
                Shape::Rect {
                    min: (0.0, 0.0),
                    max: (1.0, 1.0),
                },
                vec![],
                |x, _| x,
            ),
            Preset::InsulatorDisc => (
                square,
                vec![InclusionSpec::insulating(Shape::Disc {
                    center: (0.0, 0.0),
                    radius: 0.3,
                })],
                |x, _| x,
            ),
            Preset::TwoInclusions => (
                square,
                vec![
                    InclusionSpec::perfect(Shape::Disc {
                        center: (-0.45, 0.0),
                        radius: 0.25,
                    }),
                    InclusionSpec::insulating(Shape::Disc {
                        center: (0.45, 0.0),
                        radius: 0.25,
                    }),
                ],
                |x, y| x + 0.5 * y,
            ),
        };
        let geo = build_geometry(&domain, &inclusions, n)?;
        let g = geo.grid;
        let sigma = ScalarField::from_fn_masked(g, &geo.background(), |_, _| 1.0);
        let sigma1 = ScalarField::from_fn_masked(g, &geo.u_mask, |_, _| 1.0);
        let f = BoundaryTrace::from_fn(&geo, f);
        ForwardProblem::new(geo, sigma, sigma1, Contrast::Infinite, f)
    }

    /// Interior data for the preset. The disc example uses its closed-form
    /// current; the others solve the limit problem and extend into U with
    /// `extension`.
    pub fn pair(self, n: usize, extension: Extension) -> Result<AdmissiblePair> {
        if self == Preset::DiskExample {
            return Ok(example_phantom(n)?.pair);
        }
        let p = self.problem(n)?;
        let sol = solve_limit(&p)?;
        synthesize_magnitude(&sol, &p, extension)
    }

    /// Generating conductivity off the inclusions.
    pub fn sigma(self, n: usize) -> Result<ScalarField> {
        match self {
            Preset::DiskExample => Ok(example_phantom(n)?.exact_sigma),
            _ => Ok(self.problem(n)?.sigma),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::DiskExample => "disk-example",
            Preset::NoInclusion => "no-inclusion",
            Preset::InsulatorDisc => "insulator-disc",
            Preset::TwoInclusions => "two-inclusions",
        })
    }
}

impl FromStr for Preset {
    type Err = CdiiError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| CdiiError::Parse(format!("unknown preset '{s}' (expected disk-example, no-inclusion, insulator-disc or two-inclusions)")))
    }
}
