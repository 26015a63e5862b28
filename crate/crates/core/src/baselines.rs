//! Non-learned reference policies.

use serde::{Deserialize, Serialize};

use crate::array_codebook::SetBPattern;
use crate::error::{Error, Result};
use crate::measurement::{argmax, MeasurementReport, RsrpVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    StrongestSetB,
    SampleAndHold,
    ExhaustiveGenie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePolicy {
    pub kind: BaselineKind,
    pub pattern: SetBPattern,
}

impl BaselinePolicy {
    pub fn new(kind: BaselineKind, pattern: SetBPattern) -> Result<Self> {
        pattern.validate()?;
        if kind != BaselineKind::ExhaustiveGenie && !pattern.is_subset() {
            return Err(Error::Config(format!("{kind:?} needs Set B to be a subset of Set A")));
        }
        Ok(Self { kind, pattern })
    }

    /// Set A beam chosen from the current report, or from the full Set A
    /// measurement for the genie.
    pub fn select(&self, report: &MeasurementReport, set_a: &RsrpVector) -> Result<usize> {
        match self.kind {
            BaselineKind::StrongestSetB => baseline_strongest_set_b(report, &self.pattern),
            BaselineKind::SampleAndHold => Ok(sample_and_hold(report, &self.pattern)?.0),
            BaselineKind::ExhaustiveGenie => Ok(exhaustive_genie(set_a)),
        }
    }
}

/// Set A index of the strongest reported beam.
pub fn baseline_strongest_set_b(report: &MeasurementReport, pattern: &SetBPattern) -> Result<usize> {
    if !pattern.is_subset() {
        return Err(Error::invalid("strongest-Set-B is undefined when Set B is a separate codebook"));
    }
    report.strongest().ok_or_else(|| Error::invalid("empty report"))
}

/// Strongest reported beam, used both at `t` and at `t + 1`.
pub fn sample_and_hold(report: &MeasurementReport, pattern: &SetBPattern) -> Result<(usize, usize)> {
    let beam = baseline_strongest_set_b(report, pattern)?;
    Ok((beam, beam))
}

/// Best Set A beam under exhaustive measurement; ties to the lower index.
pub fn exhaustive_genie(set_a: &RsrpVector) -> usize {
    set_a.beam_ids[argmax(&set_a.values_dbm)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_codebook::CodebookKind;
    use crate::measurement::build_report;
    use proptest::prelude::*;

    fn vector(values: Vec<f64>) -> RsrpVector {
        RsrpVector { beam_ids: (0..values.len()).collect(), values_dbm: values, codebook: CodebookKind::Csirs, t: 0.0, t_index: 0 }
    }

    #[test]
    fn examples() {
        let report = MeasurementReport { entries: vec![(5, -60.0), (9, -70.0)], t: 0.0, t_index: 0 };
        let pattern = SetBPattern::Subset { indices: vec![5, 9], set_a_size: 16 };
        assert_eq!(baseline_strongest_set_b(&report, &pattern).unwrap(), 5);
        assert_eq!(sample_and_hold(&report, &pattern).unwrap(), (5, 5));
        let mut v = vec![-90.0; 16];
        v[12] = -50.0;
        assert_eq!(exhaustive_genie(&vector(v)), 12);
        assert_eq!(exhaustive_genie(&vector(vec![-70.0; 8])), 0);
    }

    #[test]
    fn separate_codebook_is_rejected() {
        use crate::array_codebook::{build_ssb_codebook, build_tx_codebook, AngleSpan, ArrayGeometry};
        let geom = ArrayGeometry::isotropic(4, 4);
        let csirs = build_tx_codebook(&geom, 4, 2, AngleSpan::sector_azimuth(), AngleSpan::sector_zenith()).unwrap();
        let ssb = build_ssb_codebook(&csirs, 2, 1).unwrap();
        let pattern = SetBPattern::SeparateCodebook { ssb };
        let report = MeasurementReport { entries: vec![(0, -60.0)], t: 0.0, t_index: 0 };
        assert!(baseline_strongest_set_b(&report, &pattern).is_err());
        assert!(BaselinePolicy::new(BaselineKind::SampleAndHold, pattern.clone()).is_err());
        assert!(BaselinePolicy::new(BaselineKind::ExhaustiveGenie, pattern).is_ok());
    }

    proptest! {
        #[test]
        fn strongest_matches_enumeration(values in prop::collection::vec(-120.0f64..-40.0, 16), stride in 1usize..5) {
            let pattern = SetBPattern::Subset { indices: (0..16).step_by(stride).collect(), set_a_size: 16 };
            let set_a = vector(values.clone());
            let report = build_report(&set_a, &pattern, pattern.len()).unwrap();
            let got = baseline_strongest_set_b(&report, &pattern).unwrap();
            // Enumeration oracle over Set B members.
            let mut want = usize::MAX;
            for &i in &pattern.beam_ids() {
                if want == usize::MAX || values[i] > values[want] {
                    want = i;
                }
            }
            prop_assert_eq!(got, want);
            prop_assert!(pattern.position(got).is_some());
            let identity = SetBPattern::identity(16);
            let full = build_report(&set_a, &identity, 16).unwrap();
            prop_assert_eq!(baseline_strongest_set_b(&full, &identity).unwrap(), exhaustive_genie(&set_a));
        }
    }
}
