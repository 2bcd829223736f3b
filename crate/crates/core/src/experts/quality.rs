use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

use super::external::ExternalScorer;

const MODULE: &str = "experts";

/// Ten-level rubric: distance to the category prototype, cut into nine
/// equal bands inside `cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRubric {
    pub prototypes: Vec<Vec<f64>>,
    pub cutoff: f64,
}

impl QualityRubric {
    pub fn new(prototypes: Vec<Vec<f64>>, cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::param(MODULE, "quality cutoff must be positive"));
        }
        Ok(Self { prototypes, cutoff })
    }

    pub fn level(&self, x0: &[f64], category: usize) -> Result<u8> {
        let proto = self
            .prototypes
            .get(category)
            .ok_or_else(|| Error::param(MODULE, format!("no prototype for category {category}")))?;
        check_dim(MODULE, proto.len(), x0.len())?;
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::param(MODULE, "non-finite candidate"));
        }
        let dist = x0
            .iter()
            .zip(proto)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let band = (9.0 * dist / self.cutoff).floor().clamp(0.0, 9.0) as u8;
        Ok(10 - band)
    }
}

/// What to do when the external scorer fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerFailure {
    #[default]
    Fallback,
    Error,
}

/// The quality channel: the built-in rubric, optionally fronted by an
/// external scorer.
#[derive(Debug, Clone)]
pub struct QualityExpert {
    pub rubric: QualityRubric,
    pub external: Option<ExternalScorer>,
    pub on_failure: ScorerFailure,
}

impl QualityExpert {
    pub fn builtin(rubric: QualityRubric) -> Self {
        Self {
            rubric,
            external: None,
            on_failure: ScorerFailure::Fallback,
        }
    }

    pub fn score(&self, x0: &[f64], category: usize, category_name: &str) -> Result<u8> {
        let Some(ext) = &self.external else {
            return self.rubric.level(x0, category);
        };
        match ext.level(x0, category_name) {
            Ok(level) => Ok(level),
            Err(e) if self.on_failure == ScorerFailure::Fallback => {
                log::warn!("external quality scorer failed ({e}); using the built-in rubric");
                self.rubric.level(x0, category)
            }
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rubric() -> QualityRubric {
        QualityRubric::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], 2.0).unwrap()
    }

    #[test]
    fn levels_follow_the_piecewise_map() {
        let r = rubric();
        assert_eq!(r.level(&[0.0, 0.0], 0).unwrap(), 10);
        assert_eq!(r.level(&[1.0, 1.0], 1).unwrap(), 10);
        assert_eq!(r.level(&[2.0, 0.0], 0).unwrap(), 1);
        assert_eq!(r.level(&[50.0, 0.0], 0).unwrap(), 1);
        // dist = cutoff / 2 -> floor(4.5) = 4 -> level 6
        assert_eq!(r.level(&[1.0, 0.0], 0).unwrap(), 6);
        // just inside the cutoff is still level 2
        assert_eq!(r.level(&[1.999, 0.0], 0).unwrap(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        let r = rubric();
        assert!(r.level(&[f64::NAN, 0.0], 0).is_err());
        assert!(r.level(&[0.0], 0).is_err());
        assert!(r.level(&[0.0, 0.0], 5).is_err());
        assert!(QualityRubric::new(vec![], 0.0).is_err());
    }
}
