//! Preference loss with an answer contrast, a scene contrast and an NLL term.
//!
//! Per record, with `Δ(lp) = lp − ref` (reference terms are zero in
//! reference-free mode):
//!
//! ```text
//! z_a = β_a · (Δ(lp_pos) − Δ(lp_negans))
//! z_s = β_s · (Δ(lp_pos) − Δ(lp_negscene))
//! L   = w_a · mean(−log σ(z_a)) + w_s · mean(−log σ(z_s)) + mean(−lp_pos)
//! ```
//!
//! `lp_negans` scores a wrong answer on the true scene, `lp_negscene` the
//! true answer on an unrelated scene.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneDpoConfig {
    pub w_a: f64,
    pub w_s: f64,
    pub beta_a: f64,
    pub beta_s: f64,
    pub reference_free: bool,
}

impl Default for SceneDpoConfig {
    fn default() -> Self {
        Self {
            w_a: 0.5,
            w_s: 0.5,
            beta_a: 0.2,
            beta_s: 0.03,
            reference_free: true,
        }
    }
}

impl SceneDpoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(ok(self.beta_a) && self.beta_a > 0.0 && ok(self.beta_s) && self.beta_s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperatures must be positive (beta_a={}, beta_s={})",
                self.beta_a, self.beta_s
            )));
        }
        if !(ok(self.w_a) && self.w_a >= 0.0 && ok(self.w_s) && self.w_s >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be non-negative (w_a={}, w_s={})",
                self.w_a, self.w_s
            )));
        }
        Ok(())
    }
}

/// Sequence log-probabilities for one training tuple.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogProbRecord {
    pub lp_pos: f64,
    pub lp_negans: f64,
    pub lp_negscene: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_pos: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_negans: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_negscene: Option<f64>,
}

impl LogProbRecord {
    pub fn new(lp_pos: f64, lp_negans: f64, lp_negscene: f64) -> Self {
        Self {
            lp_pos,
            lp_negans,
            lp_negscene,
            ..Default::default()
        }
    }

    pub fn with_reference(mut self, ref_pos: f64, ref_negans: f64, ref_negscene: f64) -> Self {
        self.ref_pos = Some(ref_pos);
        self.ref_negans = Some(ref_negans);
        self.ref_negscene = Some(ref_negscene);
        self
    }
}

/// A validated, non-empty batch of records.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDpoBatch {
    records: Vec<LogProbRecord>,
}

impl SceneDpoBatch {
    pub fn new(records: Vec<LogProbRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for (index, r) in records.iter().enumerate() {
            let fields = [
                ("lp_pos", Some(r.lp_pos)),
                ("lp_negans", Some(r.lp_negans)),
                ("lp_negscene", Some(r.lp_negscene)),
                ("ref_pos", r.ref_pos),
                ("ref_negans", r.ref_negans),
                ("ref_negscene", r.ref_negscene),
            ];
            for (field, value) in fields {
                if let Some(value) = value {
                    if !(value.is_finite() && value <= 0.0) {
                        return Err(Error::InvalidLogProb {
                            field,
                            index,
                            value,
                        });
                    }
                }
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[LogProbRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub answer_loss: f64,
    pub scene_loss: f64,
    pub nll_loss: f64,
}

/// Partial derivatives of the total loss for one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecordGrad {
    pub d_lp_pos: f64,
    pub d_lp_negans: f64,
    pub d_lp_negscene: f64,
}

/// `−log σ(z) = log(1 + e^(−z))`, stable for large `|z|`.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Logistic sigmoid without overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn reference(value: Option<f64>, field: &'static str, index: usize) -> Result<f64> {
    value.ok_or(Error::MissingReference { field, index })
}

/// Per-record contrast margins `(z_a, z_s)`.
pub fn margins(batch: &SceneDpoBatch, cfg: &SceneDpoConfig) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    batch
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (rp, ra, rs) = if cfg.reference_free {
                (0.0, 0.0, 0.0)
            } else {
                (
                    reference(r.ref_pos, "ref_pos", i)?,
                    reference(r.ref_negans, "ref_negans", i)?,
                    reference(r.ref_negscene, "ref_negscene", i)?,
                )
            };
            let pos = r.lp_pos - rp;
            Ok((
                cfg.beta_a * (pos - (r.lp_negans - ra)),
                cfg.beta_s * (pos - (r.lp_negscene - rs)),
            ))
        })
        .collect()
}

pub fn loss(batch: &SceneDpoBatch, cfg: &SceneDpoConfig) -> Result<LossReport> {
    let z = margins(batch, cfg)?;
    let n = batch.len() as f64;
    let answer_loss = z.iter().map(|(za, _)| neg_log_sigmoid(*za)).sum::<f64>() / n;
    let scene_loss = z.iter().map(|(_, zs)| neg_log_sigmoid(*zs)).sum::<f64>() / n;
    let nll_loss = batch.records.iter().map(|r| -r.lp_pos).sum::<f64>() / n;
    Ok(LossReport {
        total: cfg.w_a * answer_loss + cfg.w_s * scene_loss + nll_loss,
        answer_loss,
        scene_loss,
        nll_loss,
    })
}

/// Analytic gradient of the total loss with respect to the policy
/// log-probabilities; reference values are constants.
pub fn grad(batch: &SceneDpoBatch, cfg: &SceneDpoConfig) -> Result<Vec<RecordGrad>> {
    let z = margins(batch, cfg)?;
    let n = batch.len() as f64;
    Ok(z.into_iter()
        .map(|(za, zs)| {
            let answer = cfg.w_a * cfg.beta_a * sigmoid(-za);
            let scene = cfg.w_s * cfg.beta_s * sigmoid(-zs);
            RecordGrad {
                d_lp_pos: -(answer + scene + 1.0) / n,
                d_lp_negans: answer / n,
                d_lp_negscene: scene / n,
            }
        })
        .collect())
}

/// Fraction of records where the positive answer beats the negative answer,
/// and where the true scene beats the unrelated one. Ties count as misses.
pub fn accuracy_metrics(batch: &SceneDpoBatch) -> (f64, f64) {
    let n = batch.len() as f64;
    let answer = batch.records.iter().filter(|r| r.lp_pos > r.lp_negans).count() as f64;
    let scene = batch.records.iter().filter(|r| r.lp_pos > r.lp_negscene).count() as f64;
    (answer / n, scene / n)
}

/// Largest absolute gap between [`grad`] and central differences of
/// [`loss`] with the given step, over every policy log-probability.
///
/// Perturbed records are not re-validated, so records at `lp = 0` still
/// get a two-sided difference.
pub fn finite_difference_residual(
    batch: &SceneDpoBatch,
    cfg: &SceneDpoConfig,
    step: f64,
) -> Result<f64> {
    let analytic = grad(batch, cfg)?;
    let mut worst: f64 = 0.0;
    let mut probe = batch.clone();
    for i in 0..batch.len() {
        for field in 0..3 {
            let original = *field_mut(&mut probe, i, field);
            *field_mut(&mut probe, i, field) = original + step;
            let plus = loss(&probe, cfg)?.total;
            *field_mut(&mut probe, i, field) = original - step;
            let minus = loss(&probe, cfg)?.total;
            *field_mut(&mut probe, i, field) = original;
            let numeric = (plus - minus) / (2.0 * step);
            let g = &analytic[i];
            let exact = [g.d_lp_pos, g.d_lp_negans, g.d_lp_negscene][field];
            worst = worst.max((numeric - exact).abs());
        }
    }
    Ok(worst)
}

fn field_mut(batch: &mut SceneDpoBatch, index: usize, field: usize) -> &mut f64 {
    let r = &mut batch.records[index];
    match field {
        0 => &mut r.lp_pos,
        1 => &mut r.lp_negans,
        _ => &mut r.lp_negscene,
    }
}
