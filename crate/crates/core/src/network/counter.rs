use alloc::vec::Vec;

/// What a counted pass was spent on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Phase {
    AeGeneration,
    #[default]
    ParameterUpdate,
    Inference,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::AeGeneration, Phase::ParameterUpdate, Phase::Inference];

    fn slot(self) -> usize {
        match self {
            Phase::AeGeneration => 0,
            Phase::ParameterUpdate => 1,
            Phase::Inference => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhaseMacs {
    pub forward: u64,
    pub backward: u64,
}

impl PhaseMacs {
    pub fn total(&self) -> u64 {
        self.forward + self.backward
    }
}

/// Multiply-accumulate ledger.
///
/// A dense layer `d_in -> d_out` applied to a batch of `b` rows costs
/// `b * d_in * d_out` MACs forward and the same amount backward. Bias adds and
/// activations are not counted. Every charge is attributed to the current
/// [`Phase`] and, for forward passes, to the layer it ran.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OpCounter {
    phase: Phase,
    phases: [PhaseMacs; 3],
    /// `layer_forward[phase][l - 1]`: forward MACs spent in layer `l`.
    layer_forward: [Vec<u64>; 3],
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn current_phase(&self) -> Phase {
        self.phase
    }

    pub(crate) fn charge_forward(&mut self, layer: usize, macs: u64) {
        let s = self.phase.slot();
        self.phases[s].forward += macs;
        let per_layer = &mut self.layer_forward[s];
        if per_layer.len() < layer {
            per_layer.resize(layer, 0);
        }
        per_layer[layer - 1] += macs;
    }

    pub(crate) fn charge_backward(&mut self, macs: u64) {
        self.phases[self.phase.slot()].backward += macs;
    }

    pub fn phase(&self, phase: Phase) -> PhaseMacs {
        self.phases[phase.slot()]
    }

    pub fn forward_macs(&self) -> u64 {
        self.phases.iter().map(|p| p.forward).sum()
    }

    pub fn backward_macs(&self) -> u64 {
        self.phases.iter().map(|p| p.backward).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.forward_macs() + self.backward_macs()
    }

    /// Forward MACs spent in the AE-generation phase; the quantity the
    /// analytic speedup model predicts.
    pub fn ae_macs(&self) -> u64 {
        self.phase(Phase::AeGeneration).forward
    }

    /// Forward MACs charged to layer `l` (1-based) during `phase`.
    pub fn layer_forward(&self, phase: Phase, layer: usize) -> u64 {
        self.layer_forward[phase.slot()]
            .get(layer.wrapping_sub(1))
            .copied()
            .unwrap_or(0)
    }

    /// Adds another ledger into this one.
    pub fn merge(&mut self, other: &OpCounter) {
        for p in Phase::ALL {
            let s = p.slot();
            self.phases[s].forward += other.phases[s].forward;
            self.phases[s].backward += other.phases[s].backward;
            let (dst, src) = (&mut self.layer_forward[s], &other.layer_forward[s]);
            if dst.len() < src.len() {
                dst.resize(src.len(), 0);
            }
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
    }
}

/// Analytic forward MACs of one pass over layers `first..=last` for `batch` rows.
pub fn segment_macs(dims: &[usize], first: usize, last: usize, batch: usize) -> u64 {
    (first..=last)
        .map(|l| (batch * dims[l - 1] * dims[l]) as u64)
        .sum()
}
