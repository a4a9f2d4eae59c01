//! Design-based estimators computed from one realization of the design.
//!
//! Block means weight each unit by its own known design probability;
//! population means average block means within an arm. The encouragement
//! effect on uptake uses within-block ratios of sample means, and the local
//! effects are plug-in ratios of the intent-to-treat estimates over it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::design::{Arm, ExperimentData};
use crate::error::{Error, Result};
use crate::estimands::report::finish_csv;
use crate::mechanisms::Mechanism;

/// `|et_hat|` below this is treated as zero.
pub const ZERO_ET: f64 = 1e-12;

/// Inverse-probability weighted block mean
/// `sum_j Y_ij I(Z_ij = z) / (n_i P(Z_ij = z))`.
pub fn yhat_block(data: &ExperimentData, i: usize, z: bool, mech: &Mechanism) -> Result<f64> {
    let b = &data.blocks[i];
    let n = b.len();
    let m = mech.marginals(i, n)?;
    Ok((0..n)
        .filter(|&j| b.z[j] == z)
        .map(|j| b.y[j] / m.p_of(j, z))
        .sum::<f64>()
        / n as f64)
}

/// Mean of [`yhat_block`] over the blocks assigned to `arm`.
pub fn yhat_pop(data: &ExperimentData, z: bool, mech: &Mechanism, arm: Arm) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, b) in data.blocks.iter().enumerate() {
        if b.arm() == arm {
            total += yhat_block(data, i, z, mech)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyArm(arm));
    }
    Ok(total / count as f64)
}

/// `Yhat(D(1), 1, mech) - Yhat(D(0), 0, mech)` over the blocks of `arm`.
pub fn ditt_hat(data: &ExperimentData, mech: &Mechanism, arm: Arm) -> Result<f64> {
    Ok(yhat_pop(data, true, mech, arm)? - yhat_pop(data, false, mech, arm)?)
}

/// `Yhat(D(z), z, phi) - Yhat(D(z), z, psi)`, with `phi` evaluated on the
/// blocks of [`Arm::Phi`] and `psi` on those of [`Arm::Psi`].
pub fn pitt_hat(data: &ExperimentData, z: bool, mech_a: &Mechanism, mech_b: &Mechanism) -> Result<f64> {
    Ok(yhat_pop(data, z, mech_a, Arm::Phi)? - yhat_pop(data, z, mech_b, Arm::Psi)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NoEncouragedUnits,
    NoUnencouragedUnits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedBlock {
    pub block: usize,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtEstimate {
    /// Mean of the defined block values.
    pub value: f64,
    /// `None` for blocks where one encouragement arm is empty.
    pub blocks: Vec<Option<f64>>,
    pub dropped: Vec<DroppedBlock>,
}

/// Per-block `mean(D | Z = 1) - mean(D | Z = 0)`, averaged over the blocks
/// where both encouragement groups are non-empty (all blocks, both arms).
pub fn et_hat(data: &ExperimentData) -> Result<EtEstimate> {
    let mut blocks = Vec::with_capacity(data.num_blocks());
    let mut dropped = Vec::new();
    for (i, b) in data.blocks.iter().enumerate() {
        let (mut n1, mut d1, mut n0, mut d0) = (0usize, 0usize, 0usize, 0usize);
        for (&z, &d) in b.z.iter().zip(&b.d) {
            if z {
                n1 += 1;
                d1 += d as usize;
            } else {
                n0 += 1;
                d0 += d as usize;
            }
        }
        let reason = if n1 == 0 {
            Some(DropReason::NoEncouragedUnits)
        } else if n0 == 0 {
            Some(DropReason::NoUnencouragedUnits)
        } else {
            None
        };
        match reason {
            Some(reason) => {
                dropped.push(DroppedBlock { block: i, reason });
                blocks.push(None);
            }
            None => blocks.push(Some(d1 as f64 / n1 as f64 - d0 as f64 / n0 as f64)),
        }
    }
    let defined: Vec<f64> = blocks.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::AllBlocksUndefined);
    }
    Ok(EtEstimate {
        value: defined.iter().sum::<f64>() / defined.len() as f64,
        blocks,
        dropped,
    })
}

fn nonzero(et: &EtEstimate) -> Result<f64> {
    if et.value.abs() < ZERO_ET {
        Err(Error::ZeroEncouragementEffectEstimate)
    } else {
        Ok(et.value)
    }
}

/// `ditt_hat(phi) / et_hat`.
pub fn ldt_hat(data: &ExperimentData, mech_a: &Mechanism) -> Result<f64> {
    let et = nonzero(&et_hat(data)?)?;
    Ok(ditt_hat(data, mech_a, Arm::Phi)? / et)
}

/// `(pitt_hat(1) - pitt_hat(0)) / et_hat`.
pub fn lpt_diff_hat(data: &ExperimentData, mech_a: &Mechanism, mech_b: &Mechanism) -> Result<f64> {
    let et = nonzero(&et_hat(data)?)?;
    Ok((pitt_hat(data, true, mech_a, mech_b)? - pitt_hat(data, false, mech_a, mech_b)?) / et)
}

/// `pitt_hat(0)`, which targets `LPT(0)` under one-sided compliance.
pub fn lpt0_hat(data: &ExperimentData, mech_a: &Mechanism, mech_b: &Mechanism) -> Result<f64> {
    pitt_hat(data, false, mech_a, mech_b)
}

/// Names of the estimators in [`EstimateReport`], in report order.
pub const ESTIMATORS: [&str; 7] = ["ditt_hat", "pitt_hat_1", "pitt_hat_0", "et_hat", "ldt_hat", "lpt_diff_hat", "lpt0_hat"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDiagnostics {
    pub arm_sizes: ArmSizes,
    pub et_blocks: Vec<Option<f64>>,
    pub et_dropped: Vec<DroppedBlock>,
    /// How the encouragement-effect denominator is aggregated.
    pub et_pooling: String,
    /// Estimators that could not be computed, with the reason.
    pub undefined: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmSizes {
    pub phi: usize,
    pub psi: usize,
}

/// Every estimator for one realization. Undefined estimators are `None` and
/// listed in the diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub mech_a: String,
    pub mech_b: String,
    pub ditt_hat: Option<f64>,
    pub pitt_hat_1: Option<f64>,
    pub pitt_hat_0: Option<f64>,
    pub et_hat: Option<f64>,
    pub ldt_hat: Option<f64>,
    pub lpt_diff_hat: Option<f64>,
    pub lpt0_hat: Option<f64>,
    pub diagnostics: EstimateDiagnostics,
}

impl EstimateReport {
    /// Values in [`ESTIMATORS`] order.
    pub fn values(&self) -> [Option<f64>; 7] {
        [
            self.ditt_hat,
            self.pitt_hat_1,
            self.pitt_hat_0,
            self.et_hat,
            self.ldt_hat,
            self.lpt_diff_hat,
            self.lpt0_hat,
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["estimator", "value"])?;
        for (name, v) in ESTIMATORS.iter().zip(self.values()) {
            w.write_record([name.to_string(), v.map_or_else(String::new, |x| x.to_string())])?;
        }
        finish_csv(w)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "mechanisms: {} (phi, {} blocks) vs {} (psi, {} blocks)",
            self.mech_a, self.diagnostics.arm_sizes.phi, self.mech_b, self.diagnostics.arm_sizes.psi
        );
        for (name, v) in ESTIMATORS.iter().zip(self.values()) {
            match v {
                Some(x) => {
                    let _ = writeln!(s, "{name:<14} {x:>16.10}");
                }
                None => {
                    let _ = writeln!(s, "{name:<14} {:>16}", "undefined");
                }
            }
        }
        for d in &self.diagnostics.et_dropped {
            let _ = writeln!(s, "et_hat dropped block {} ({:?})", d.block, d.reason);
        }
        for (name, why) in &self.diagnostics.undefined {
            let _ = writeln!(s, "{name}: {why}");
        }
        s
    }
}

/// Computes every estimator; per-estimator failures are recorded rather
/// than propagated. Arity errors between mechanisms and data abort.
pub fn estimate(data: &ExperimentData, mech_a: &Mechanism, mech_b: &Mechanism) -> Result<EstimateReport> {
    for (i, b) in data.blocks.iter().enumerate() {
        mech_a.marginals(i, b.len())?;
        mech_b.marginals(i, b.len())?;
    }
    let mut undefined = Vec::new();
    let mut keep = |name: &str, r: Result<f64>| -> Option<f64> {
        match r {
            Ok(v) if v.is_finite() => Some(v),
            Ok(v) => {
                undefined.push((name.to_string(), format!("non-finite value {v}")));
                None
            }
            Err(e) => {
                undefined.push((name.to_string(), e.to_string()));
                None
            }
        }
    };
    let et = et_hat(data);
    let (et_blocks, et_dropped) = match &et {
        Ok(e) => (e.blocks.clone(), e.dropped.clone()),
        Err(_) => (vec![None; data.num_blocks()], Vec::new()),
    };
    let ditt = keep("ditt_hat", ditt_hat(data, mech_a, Arm::Phi));
    let pitt_1 = keep("pitt_hat_1", pitt_hat(data, true, mech_a, mech_b));
    let pitt_0 = keep("pitt_hat_0", pitt_hat(data, false, mech_a, mech_b));
    let et_value = keep("et_hat", et.map(|e| e.value));
    let ldt = keep("ldt_hat", ldt_hat(data, mech_a));
    let lpt_diff = keep("lpt_diff_hat", lpt_diff_hat(data, mech_a, mech_b));
    let lpt0 = keep("lpt0_hat", lpt0_hat(data, mech_a, mech_b));
    Ok(EstimateReport {
        mech_a: mech_a.name().to_string(),
        mech_b: mech_b.name().to_string(),
        ditt_hat: ditt,
        pitt_hat_1: pitt_1,
        pitt_hat_0: pitt_0,
        et_hat: et_value,
        ldt_hat: ldt,
        lpt_diff_hat: lpt_diff,
        lpt0_hat: lpt0,
        diagnostics: EstimateDiagnostics {
            arm_sizes: ArmSizes {
                phi: data.arm_size(Arm::Phi),
                psi: data.arm_size(Arm::Psi),
            },
            et_blocks,
            et_dropped,
            et_pooling: "mean of block ratios over every block with both encouragement groups, across both arms".into(),
            undefined,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::BlockData;
    use proptest::prelude::*;

    fn block(s: bool, z: &[u8], d: &[u8], y: &[f64]) -> BlockData {
        BlockData {
            s,
            z: z.iter().map(|&v| v == 1).collect(),
            d: d.iter().map(|&v| v == 1).collect(),
            y: y.to_vec(),
        }
    }

    fn half() -> Mechanism {
        Mechanism::scalar("phi", 0.5).unwrap()
    }

    #[test]
    fn block_mean_examples() {
        let data = ExperimentData::new(vec![
            block(true, &[1, 1, 0, 0], &[1, 1, 0, 0], &[3.0; 4]),
            block(false, &[0, 0, 0], &[0, 0, 0], &[1.0, 2.0, 3.0]),
        ])
        .unwrap();
        assert_eq!(yhat_block(&data, 0, true, &half()).unwrap(), 3.0);
        assert_eq!(yhat_block(&data, 1, true, &half()).unwrap(), 0.0);
        assert_eq!(yhat_pop(&data, true, &half(), Arm::Phi).unwrap(), 3.0);
        let per_unit = Mechanism::per_unit("u", vec![0.25, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(yhat_block(&data, 0, true, &per_unit).unwrap(), (12.0 + 6.0) / 4.0);
    }

    #[test]
    fn empty_arm_is_an_error() {
        let data = ExperimentData::new(vec![block(true, &[1, 0], &[1, 0], &[1.0, 0.0])]).unwrap();
        assert!(matches!(yhat_pop(&data, true, &half(), Arm::Psi), Err(Error::EmptyArm(Arm::Psi))));
        let psi = Mechanism::scalar("psi", 0.2).unwrap();
        let r = estimate(&data, &half(), &psi).unwrap();
        assert!(r.pitt_hat_1.is_none() && r.ditt_hat.is_some());
        assert!(r.diagnostics.undefined.iter().any(|(n, _)| n == "pitt_hat_1"));
    }

    #[test]
    fn et_hat_examples() {
        let data = ExperimentData::new(vec![
            block(true, &[1, 0, 1], &[1, 0, 1], &[0.0; 3]),
            block(false, &[1, 1], &[1, 0], &[0.0; 2]),
            block(false, &[0, 0], &[0, 0], &[0.0; 2]),
        ])
        .unwrap();
        let e = et_hat(&data).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.blocks, vec![Some(1.0), None, None]);
        assert_eq!(
            e.dropped,
            vec![
                DroppedBlock { block: 1, reason: DropReason::NoUnencouragedUnits },
                DroppedBlock { block: 2, reason: DropReason::NoEncouragedUnits },
            ]
        );
        let all_bad = ExperimentData::new(vec![block(true, &[1], &[1], &[0.0])]).unwrap();
        assert!(matches!(et_hat(&all_bad), Err(Error::AllBlocksUndefined)));
    }

    #[test]
    fn never_takers_give_zero_et_error() {
        let data = ExperimentData::new(vec![
            block(true, &[1, 0], &[0, 0], &[1.0, 2.0]),
            block(false, &[1, 0], &[0, 0], &[1.0, 2.0]),
        ])
        .unwrap();
        assert!(matches!(ldt_hat(&data, &half()), Err(Error::ZeroEncouragementEffectEstimate)));
        let r = estimate(&data, &half(), &Mechanism::scalar("psi", 0.3).unwrap()).unwrap();
        assert!(r.ldt_hat.is_none() && r.lpt_diff_hat.is_none());
        assert_eq!(r.et_hat, Some(0.0));
    }

    #[test]
    fn report_serializes() {
        let data = ExperimentData::new(vec![
            block(true, &[1, 0], &[1, 0], &[2.0, 1.0]),
            block(false, &[1, 0], &[1, 0], &[3.0, 1.0]),
        ])
        .unwrap();
        let r = estimate(&data, &half(), &Mechanism::scalar("psi", 0.25).unwrap()).unwrap();
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 8);
        let back: EstimateReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_text().contains("ldt_hat"));
    }

    fn data_strategy() -> impl Strategy<Value = ExperimentData> {
        prop::collection::vec(
            (1usize..6).prop_flat_map(|n| {
                (
                    prop::collection::vec(any::<bool>(), n),
                    prop::collection::vec(any::<bool>(), n),
                    prop::collection::vec(-5.0f64..5.0, n),
                )
            }),
            2..8,
        )
        .prop_map(|blocks| {
            let blocks: Vec<BlockData> = blocks
                .into_iter()
                .enumerate()
                .map(|(i, (z, d, y))| BlockData { s: i % 2 == 0, z, d, y })
                .collect();
            ExperimentData::new(blocks).unwrap()
        })
    }

    proptest! {
        #[test]
        fn scaling_outcomes_scales_estimators(data in data_strategy(), c in -3.0f64..3.0) {
            let (a, b) = (Mechanism::scalar("phi", 0.6).unwrap(), Mechanism::scalar("psi", 0.3).unwrap());
            let mut scaled = data.clone();
            for blk in &mut scaled.blocks {
                for y in &mut blk.y {
                    *y *= c;
                }
            }
            let r = estimate(&data, &a, &b).unwrap();
            let s = estimate(&scaled, &a, &b).unwrap();
            prop_assert_eq!(r.et_hat, s.et_hat);
            for (x, y) in [(r.ditt_hat, s.ditt_hat), (r.pitt_hat_1, s.pitt_hat_1), (r.pitt_hat_0, s.pitt_hat_0), (r.ldt_hat, s.ldt_hat), (r.lpt_diff_hat, s.lpt_diff_hat)] {
                if let (Some(x), Some(y)) = (x, y) {
                    prop_assert!((x * c - y).abs() <= 1e-12 * (1.0 + x.abs()));
                }
            }
        }

        #[test]
        fn relabeling_arms_negates_pitt(data in data_strategy()) {
            let (a, b) = (Mechanism::scalar("phi", 0.6).unwrap(), Mechanism::scalar("psi", 0.3).unwrap());
            let mut swapped = data.clone();
            for blk in &mut swapped.blocks {
                blk.s = !blk.s;
            }
            for z in [false, true] {
                let x = pitt_hat(&data, z, &a, &b).unwrap();
                let y = pitt_hat(&swapped, z, &b, &a).unwrap();
                prop_assert_eq!(x, -y);
            }
        }

        #[test]
        fn all_compliers_ldt_equals_ditt(data in data_strategy()) {
            let mut data = data;
            for blk in &mut data.blocks {
                blk.d = blk.z.clone();
            }
            let a = Mechanism::scalar("phi", 0.5).unwrap();
            if let Ok(e) = et_hat(&data) {
                prop_assert_eq!(e.value, 1.0);
                prop_assert_eq!(ldt_hat(&data, &a).unwrap(), ditt_hat(&data, &a, Arm::Phi).unwrap());
            }
        }
    }
}
