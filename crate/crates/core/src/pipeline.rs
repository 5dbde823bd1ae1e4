//! Unit HMM training: balance the per-label segments, initialize each unit by
//! uniform subdivision, then refine with Baum-Welch.

use crate::decoder::UnitModels;
use crate::error::Result;
use crate::hmm::{baum_welch, init_hmm, BaumWelchConfig, HmmInitConfig};
use crate::rng;
use crate::scalar::Real;
use crate::training_data::{balance_classes, LabeledSegment};
use rayon::prelude::*;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub divisor: usize,
    pub mixtures: usize,
    pub min_samples: usize,
    pub max_samples: usize,
    pub variance_floor: f64,
    pub baum_welch_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            divisor: crate::hmm::DEFAULT_STATE_DIVISOR,
            mixtures: 1,
            min_samples: 12,
            max_samples: 30,
            variance_floor: 1e-4,
            baum_welch_iters: 30,
            tol: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedUnits<F> {
    pub models: UnitModels<F>,
    /// Final total training log-likelihood per unit.
    pub log_likelihood: BTreeMap<String, F>,
    pub synthetic: BTreeMap<String, usize>,
}

pub fn train_unit_models<F: Real>(
    segments: &BTreeMap<String, Vec<LabeledSegment<F>>>,
    cfg: &TrainConfig,
) -> Result<TrainedUnits<F>> {
    let balanced = balance_classes(segments, cfg.min_samples, cfg.max_samples, cfg.seed)?;
    let labels: Vec<(usize, &String)> = balanced.keys().enumerate().collect();
    let trained: Vec<(String, crate::hmm::UnitHmm<F>, F)> = labels
        .par_iter()
        .map(|&(i, label)| {
            let segs = &balanced[label];
            let views: Vec<_> = segs.iter().map(|s| s.frames.view()).collect();
            let init_cfg = HmmInitConfig {
                divisor: cfg.divisor,
                mixtures: cfg.mixtures,
                variance_floor: cfg.variance_floor,
                seed: rng::derived_seed(cfg.seed.wrapping_add(1), i as u64),
            };
            let hmm = init_hmm(label.as_str(), &views, &init_cfg)?;
            let bw = baum_welch(
                &hmm,
                &views,
                &BaumWelchConfig {
                    max_iters: cfg.baum_welch_iters,
                    tol: cfg.tol,
                    variance_floor: cfg.variance_floor,
                },
            )?;
            let ll = bw.log_likelihood_trace.last().copied().unwrap_or_else(F::zero);
            Ok((label.clone(), bw.hmm, ll))
        })
        .collect::<Result<_>>()?;
    let mut out = TrainedUnits {
        models: BTreeMap::new(),
        log_likelihood: BTreeMap::new(),
        synthetic: BTreeMap::new(),
    };
    for (label, hmm, ll) in trained {
        let synth = balanced[&label]
            .iter()
            .filter(|s| s.source == crate::training_data::Source::Synthetic)
            .count();
        out.synthetic.insert(label.clone(), synth);
        out.log_likelihood.insert(label.clone(), ll);
        out.models.insert(label, hmm);
    }
    Ok(out)
}
