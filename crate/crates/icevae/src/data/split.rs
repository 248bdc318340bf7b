//! Temporal-mask splitting of (init, lead) pairs into train/validation/test.
//!
//! The mask guarantees that no verification-target month of a later split
//! can be seen as a training target of an earlier split: train pairs must
//! have their target month at or before `train_end`, validation forecasts
//! are initialized strictly after `train_end` with targets at or before
//! `val_end`, and analogously for test.

use serde::{Deserialize, Serialize};

use crate::data::{HindcastCube, ObsCube};
use crate::error::{IceError, Result};

/// Split boundaries in months since epoch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_end: i32,
    pub val_end: i32,
    pub test_end: i32,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_end < self.val_end && self.val_end < self.test_end) {
            return Err(IceError::InvalidConfig(format!(
                "split boundaries must be strictly increasing: {} < {} < {}",
                self.train_end, self.val_end, self.test_end
            )));
        }
        Ok(())
    }
}

/// One split as (init index, 1-based lead) pairs.
pub type SplitSet = Vec<(usize, usize)>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Splits {
    pub train: SplitSet,
    pub val: SplitSet,
    pub test: SplitSet,
    /// (init, lead) pairs dropped because the observational record has no
    /// entry for their target month.
    pub dropped_no_obs: usize,
}

pub fn temporal_split(cube: &HindcastCube, obs: &ObsCube, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut dropped = 0usize;
    for (ti, &t) in cube.inits.iter().enumerate() {
        for lead in 1..=cube.n_lead {
            let target = t + lead as i32;
            if !obs.has_month(target) {
                dropped += 1;
                continue;
            }
            if target <= spec.train_end {
                train.push((ti, lead));
            } else if t > spec.train_end && target <= spec.val_end {
                val.push((ti, lead));
            } else if t > spec.val_end && target <= spec.test_end {
                test.push((ti, lead));
            }
        }
    }
    for (name, set, boundary) in [
        ("train", &train, spec.train_end),
        ("val", &val, spec.val_end),
        ("test", &test, spec.test_end),
    ] {
        if set.is_empty() {
            return Err(IceError::EmptySplit {
                split: name.to_string(),
                boundary,
            });
        }
    }
    Ok(Splits {
        train,
        val,
        test,
        dropped_no_obs: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::N_LEAD;
    use crate::grid::PolarGrid;
    use ndarray::{Array2, Array3, Array5};

    fn cube_and_obs(first_init: i32, n_init: usize) -> (HindcastCube, ObsCube) {
        let grid = PolarGrid::new(2, 4, 50.0, 1.0, Array2::from_elem((2, 4), false)).unwrap();
        let inits: Vec<i32> = (0..n_init as i32).map(|k| first_init + k).collect();
        let cube = HindcastCube {
            inits,
            n_lead: N_LEAD,
            n_member: 2,
            values: Array5::zeros((n_init, N_LEAD, 2, 2, 4)),
            grid: grid.clone(),
        };
        let n_months = n_init + N_LEAD + 1;
        let obs = ObsCube {
            first_month: first_init,
            values: Array3::zeros((n_months, 2, 4)),
            n_lead: N_LEAD,
            grid,
        };
        (cube, obs)
    }

    #[test]
    fn late_init_contributes_only_early_leads_to_train() {
        // inits 0..48, train_end at month 30
        let (cube, obs) = cube_and_obs(0, 48);
        let spec = SplitSpec {
            train_end: 30,
            val_end: 45,
            test_end: 58,
        };
        let splits = temporal_split(&cube, &obs, &spec).unwrap();
        // init month 25 (index 25): only leads with target <= 30, i.e. 1..=5
        let leads: Vec<usize> = splits
            .train
            .iter()
            .filter(|(ti, _)| *ti == 25)
            .map(|(_, l)| *l)
            .collect();
        assert_eq!(leads, vec![1, 2, 3, 4, 5]);
        // and its later leads appear in no split (init <= train_end)
        assert!(!splits.val.iter().any(|(ti, _)| *ti == 25));
        assert!(!splits.test.iter().any(|(ti, _)| *ti == 25));
    }

    #[test]
    fn empty_split_is_an_error() {
        let (cube, obs) = cube_and_obs(0, 10);
        // all data before train_end => val and test empty
        let spec = SplitSpec {
            train_end: 100,
            val_end: 101,
            test_end: 102,
        };
        let err = temporal_split(&cube, &obs, &spec).unwrap_err();
        match err {
            IceError::EmptySplit { split, boundary } => {
                assert_eq!(split, "val");
                assert_eq!(boundary, 101);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn no_future_leak_exhaustive() {
        let (cube, obs) = cube_and_obs(0, 48);
        let spec = SplitSpec {
            train_end: 28,
            val_end: 44,
            test_end: 58,
        };
        let splits = temporal_split(&cube, &obs, &spec).unwrap();
        let target = |(ti, l): &(usize, usize)| cube.inits[*ti] + *l as i32;
        let max_train = splits.train.iter().map(target).max().unwrap();
        let min_val = splits.val.iter().map(target).min().unwrap();
        let min_test = splits.test.iter().map(target).min().unwrap();
        assert!(max_train <= spec.train_end);
        assert!(min_val > spec.train_end);
        assert!(min_test > spec.val_end);
        // pairwise disjoint
        for p in &splits.train {
            assert!(!splits.val.contains(p) && !splits.test.contains(p));
        }
        for p in &splits.val {
            assert!(!splits.test.contains(p));
        }
    }

    #[test]
    fn drops_pairs_without_observation() {
        let grid = PolarGrid::new(2, 4, 50.0, 1.0, Array2::from_elem((2, 4), false)).unwrap();
        let cube = HindcastCube {
            inits: (0..18).collect(),
            n_lead: N_LEAD,
            n_member: 1,
            values: Array5::zeros((18, N_LEAD, 1, 2, 4)),
            grid: grid.clone(),
        };
        // record starts at month 3: targets 1..=2 have no observation
        let obs = ObsCube {
            first_month: 3,
            values: Array3::zeros((30, 2, 4)),
            n_lead: N_LEAD,
            grid,
        };
        let spec = SplitSpec {
            train_end: 8,
            val_end: 14,
            test_end: 22,
        };
        let splits = temporal_split(&cube, &obs, &spec).unwrap();
        // targets before month 3: (0,1), (0,2), (1,1)
        assert_eq!(splits.dropped_no_obs, 3);
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SplitSpec {
            train_end: 10,
            val_end: 10,
            test_end: 20,
        };
        assert!(spec.validate().is_err());
    }
}
