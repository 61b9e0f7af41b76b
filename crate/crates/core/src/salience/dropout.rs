use std::cmp::Ordering;

use serde::Serialize;

use super::{gradcam_combine, ActivePatchSet, GradCamStack, SalienceError};
use crate::provider::{validate_response, SalienceProvider};

/// Drop the most salient half of the active patches.
///
/// Exactly `floor(|active| / 2)` patches are removed: active patches are
/// ranked by `u` descending, ties going to the lower row-major index first.
pub fn drop_set_update(u: &[f32], active: &ActivePatchSet) -> Result<ActivePatchSet, SalienceError> {
    let n = active.grid() * active.grid();
    if u.len() != n {
        return Err(SalienceError::MapSize {
            len: u.len(),
            expected: n,
        });
    }
    if let Some(index) = u.iter().position(|v| !v.is_finite()) {
        return Err(SalienceError::NonFinite {
            what: "class-agnostic salience",
            index,
            value: u[index],
        });
    }
    let mut ranked: Vec<usize> = active.indices().collect();
    if ranked.is_empty() {
        return Err(SalienceError::EmptyActiveSet);
    }
    ranked.sort_by(|&a, &b| match u[b].total_cmp(&u[a]) {
        Ordering::Equal => a.cmp(&b),
        other => other,
    });
    let mut flags = active.flags().to_vec();
    for &index in &ranked[..ranked.len() / 2] {
        flags[index] = false;
    }
    Ok(ActivePatchSet::from_flags(active.grid(), flags).expect("grid unchanged"))
}

/// One dropout iteration: the patches fed to the provider and the
/// resulting GradCAM map (zero outside `active`).
#[derive(Clone, Debug, Serialize)]
pub struct DropoutRound {
    pub active: ActivePatchSet,
    pub salience: GradCamStack,
}

impl DropoutRound {
    /// Class-agnostic salience of this round.
    pub fn class_sum(&self) -> Vec<f32> {
        self.salience.class_sum()
    }
}

/// Salience summed over every dropout round, with the full history.
#[derive(Clone, Debug, Serialize)]
pub struct AccumulatedSalience {
    aggregate: GradCamStack,
    rounds: Vec<DropoutRound>,
    final_active: ActivePatchSet,
}

impl AccumulatedSalience {
    /// Build from a history, summing it in order.
    pub fn from_rounds(rounds: Vec<DropoutRound>, final_active: ActivePatchSet) -> Self {
        assert!(!rounds.is_empty(), "at least one dropout round");
        let (k, grid) = rounds[0].salience.shape();
        let mut sum = vec![0.0f32; k * grid * grid];
        for round in &rounds {
            for (acc, v) in sum.iter_mut().zip(round.salience.values()) {
                *acc += *v;
            }
        }
        let aggregate =
            GradCamStack::new(super::PatchStack::new(k, grid, sum).expect("shape")).expect("sum of nonnegative stacks");
        Self {
            aggregate,
            rounds,
            final_active,
        }
    }

    pub fn aggregate(&self) -> &GradCamStack {
        &self.aggregate
    }

    pub fn rounds(&self) -> &[DropoutRound] {
        &self.rounds
    }

    /// Patches still active after the last drop.
    pub fn final_active(&self) -> &ActivePatchSet {
        &self.final_active
    }

    pub fn n_classes(&self) -> usize {
        self.aggregate.n_classes()
    }

    pub fn grid(&self) -> usize {
        self.aggregate.grid()
    }
}

/// Run `rounds` iterations of salience dropout against `provider`.
pub fn salience_dropout_run(
    provider: &mut dyn SalienceProvider,
    grid: usize,
    rounds: usize,
) -> Result<AccumulatedSalience, SalienceError> {
    if rounds == 0 {
        return Err(SalienceError::NoRounds);
    }
    if provider.grid() != grid {
        return Err(SalienceError::GridMismatch {
            expected: grid,
            found: provider.grid(),
        });
    }
    let n_classes = provider.n_classes();
    let mut active = ActivePatchSet::full(grid);
    let mut history = Vec::with_capacity(rounds);
    for iteration in 1..=rounds {
        let response = provider
            .query(&active)
            .and_then(|r| validate_response(&r, n_classes, grid, &active).map(|_| r))
            .map_err(|source| SalienceError::Provider { iteration, source })?;
        let mut cam = gradcam_combine(&response.attention, &response.gradient)?.into_inner();
        for k in 0..n_classes {
            for (v, on) in cam.class_map_mut(k).iter_mut().zip(active.flags()) {
                if !on {
                    *v = 0.0;
                }
            }
        }
        let salience = GradCamStack::new(cam)?;
        let next = drop_set_update(&salience.class_sum(), &active)?;
        log::debug!(
            "dropout round {iteration}: {} -> {} active patches",
            active.len(),
            next.len()
        );
        history.push(DropoutRound {
            active: std::mem::replace(&mut active, next),
            salience,
        });
    }
    Ok(AccumulatedSalience::from_rounds(history, active))
}
