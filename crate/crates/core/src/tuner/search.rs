//! Grouped random search and the two-stage tuning protocol.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::space::{Axis, SearchPoint, SearchSpace};
use super::TunerError;
use crate::config::PipelineConfig;

/// Reward of one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub total: f64,
    /// Per-image rewards, when the evaluator has images.
    pub per_image: Vec<u32>,
}

/// Scores configurations; one instance serves one search group.
pub trait ConfigEvaluator {
    fn evaluate(&mut self, config: &PipelineConfig) -> Result<Scored, TunerError>;
}

impl<E: ConfigEvaluator + ?Sized> ConfigEvaluator for &mut E {
    fn evaluate(&mut self, config: &PipelineConfig) -> Result<Scored, TunerError> {
        (**self).evaluate(config)
    }
}

/// Evaluator from a closure returning the total reward.
pub struct FnEvaluator<F>(pub F);

impl<F: FnMut(&PipelineConfig) -> f64> ConfigEvaluator for FnEvaluator<F> {
    fn evaluate(&mut self, config: &PipelineConfig) -> Result<Scored, TunerError> {
        Ok(Scored {
            total: (self.0)(config),
            per_image: Vec::new(),
        })
    }
}

/// One evaluation, as written to the trace file (one JSON object per line).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1 for layer/head/threshold, 2 for blur sigma.
    pub stage: u8,
    pub group: usize,
    pub config: PipelineConfig,
    pub total_reward: f64,
    pub per_image: Vec<u32>,
}

impl TraceRecord {
    pub fn to_ndjson<'a>(records: impl IntoIterator<Item = &'a TraceRecord>) -> String {
        records
            .into_iter()
            .map(|r| serde_json::to_string(r).expect("trace record serializes") + "\n")
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub best: PipelineConfig,
    pub best_reward: f64,
    /// Every evaluation, group by group in evaluation order.
    pub trace: Vec<TraceRecord>,
}

/// Sample `iters_per_group` points without replacement from each of
/// `evaluators.len()` contiguous layer blocks of `space` (fewer when a
/// block is smaller), evaluate them, and keep the best.
///
/// Groups run on their own threads; group `g` draws from stream `g` of a
/// ChaCha8 generator seeded with `seed`, so the result depends only on
/// the arguments. On equal reward the earlier record (group order, then
/// evaluation order) wins. Every configuration is `base` with the point's
/// layer, head, threshold and blur sigma.
pub fn random_search<E: ConfigEvaluator + Send>(
    space: &SearchSpace,
    base: &PipelineConfig,
    evaluators: &mut [E],
    iters_per_group: usize,
    seed: u64,
) -> Result<SearchOutcome, TunerError> {
    search_stage(space, base, evaluators, iters_per_group, seed, 1, 0)
}

/// [`random_search`] with a plain reward function shared by all groups.
pub fn random_search_fn<F: Fn(&PipelineConfig) -> f64 + Sync>(
    space: &SearchSpace,
    base: &PipelineConfig,
    evaluate: F,
    groups: usize,
    iters_per_group: usize,
    seed: u64,
) -> Result<SearchOutcome, TunerError> {
    let mut evaluators: Vec<_> = (0..groups).map(|_| FnEvaluator(&evaluate)).collect();
    random_search(space, base, &mut evaluators, iters_per_group, seed)
}

fn search_stage<E: ConfigEvaluator + Send>(
    space: &SearchSpace,
    base: &PipelineConfig,
    evaluators: &mut [E],
    iters_per_group: usize,
    seed: u64,
    stage: u8,
    first_stream: u64,
) -> Result<SearchOutcome, TunerError> {
    space.validate()?;
    if iters_per_group == 0 {
        return Err(TunerError::Settings("iterations per group must be >= 1".into()));
    }
    let blocks = space.partition(evaluators.len())?;
    let results: Vec<Result<Vec<TraceRecord>, TunerError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = blocks
            .iter()
            .zip(evaluators.iter_mut())
            .enumerate()
            .map(|(group, (block, evaluator))| {
                scope.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(first_stream + group as u64);
                    let picks = sample(&mut rng, block.len(), iters_per_group.min(block.len()));
                    let mut records = Vec::with_capacity(picks.len());
                    for index in picks.iter() {
                        let config = block[index].apply(base);
                        let scored = evaluator.evaluate(&config)?;
                        if !scored.total.is_finite() {
                            return Err(TunerError::Evaluation(format!(
                                "non-finite reward {} for {:?}",
                                scored.total, block[index]
                            )));
                        }
                        log::debug!("stage {stage} group {group}: {:?} -> {}", block[index], scored.total);
                        records.push(TraceRecord {
                            stage,
                            group,
                            config,
                            total_reward: scored.total,
                            per_image: scored.per_image,
                        });
                    }
                    Ok(records)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("search group panicked"))
            .collect()
    });
    let mut trace = Vec::new();
    for r in results {
        trace.extend(r?);
    }
    let best = trace
        .iter()
        .fold(None::<&TraceRecord>, |best, r| match best {
            Some(b) if b.total_reward >= r.total_reward => Some(b),
            _ => Some(r),
        })
        .expect("every group evaluates at least one point");
    Ok(SearchOutcome {
        best: best.config.clone(),
        best_reward: best.total_reward,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StagedOutcome {
    /// `base` with the tuned layer, head, threshold and blur sigma.
    pub config: PipelineConfig,
    pub stage1: SearchOutcome,
    /// Absent when the blur-sigma axis has a single value.
    pub stage2: Option<SearchOutcome>,
}

impl StagedOutcome {
    pub fn trace(&self) -> impl Iterator<Item = &TraceRecord> {
        self.stage1
            .trace
            .iter()
            .chain(self.stage2.iter().flat_map(|s| s.trace.iter()))
    }

    pub fn evaluations(&self) -> usize {
        self.trace().count()
    }
}

/// Two-stage tuning.
///
/// Stage 1 searches layer, head and threshold over `evaluators.len()`
/// groups, scoring single-round salience without blur or CRF. Stage 2
/// fixes them and searches blur sigma in one group (on `evaluators[0]`),
/// scoring blurred masks before the CRF with `base.dropout_rounds` rounds.
/// Stage 2 is skipped when the sigma axis has one value.
pub fn staged_tune<E: ConfigEvaluator + Send>(
    space: &SearchSpace,
    base: &PipelineConfig,
    evaluators: &mut [E],
    iters_per_group: usize,
    seed: u64,
) -> Result<StagedOutcome, TunerError> {
    space.validate()?;
    let sigmas = space.blur_sigma.values();
    let stage1_space = SearchSpace {
        blur_sigma: Axis::fixed(if sigmas.contains(&base.blur_sigma) {
            base.blur_sigma
        } else {
            sigmas[0]
        }),
        ..space.clone()
    };
    let stage1_base = PipelineConfig {
        dropout_rounds: 1,
        blur: false,
        crf: false,
        ..base.clone()
    };
    let stage1 = search_stage(&stage1_space, &stage1_base, evaluators, iters_per_group, seed, 1, 0)?;
    let mut point = SearchPoint::of(&stage1.best);
    let stage2 = if sigmas.len() > 1 {
        let fixed = SearchPoint {
            blur_sigma: sigmas[0],
            ..point
        };
        let stage2_space = SearchSpace {
            blur_sigma: space.blur_sigma,
            ..SearchSpace::singleton(&fixed)
        };
        let stage2_base = PipelineConfig {
            blur: true,
            crf: false,
            ..base.clone()
        };
        let groups = evaluators.len() as u64;
        let outcome = search_stage(
            &stage2_space,
            &stage2_base,
            &mut evaluators[..1],
            iters_per_group,
            seed,
            2,
            groups,
        )?;
        point.blur_sigma = outcome.best.blur_sigma;
        Some(outcome)
    } else {
        point.blur_sigma = sigmas[0];
        None
    };
    Ok(StagedOutcome {
        config: point.apply(base),
        stage1,
        stage2,
    })
}
