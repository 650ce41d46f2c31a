use serde::{Deserialize, Serialize};

use crate::efe::{select_frames, uniform_stride, EfeMode, SelectionResult};
use crate::error::Result;
use crate::genmodel::ConfusionModel;
use crate::learnkit::Mode;
use crate::numkit::{softmax_slice, Categorical, NumArray, Real, RngStream};
use crate::synthdata::SequenceSample;

use super::Model;

/// Which frames a sequence prediction observes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorMode {
    UniformStride,
    Efe,
}

impl SelectorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectorMode::UniformStride => "uniform_stride",
            SelectorMode::Efe => "efe",
        }
    }
}

/// Frames `[T, 1, G, G]` of one sequence, or the subset `indices`.
pub fn sequence_frames<F: Real>(sample: &SequenceSample, indices: Option<&[usize]>) -> NumArray<F> {
    let s = sample.frames.shape();
    let (t, g) = (s[0], s[1]);
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..t).collect();
            &all
        }
    };
    let mut data = Vec::with_capacity(idx.len() * g * g);
    for &i in idx {
        data.extend(sample.frame(i).iter().map(|&v| F::lit(v as f64)));
    }
    NumArray::new(vec![idx.len(), 1, g, g], data).expect("sizes agree")
}

/// Infer-mode embeddings and class distributions of every frame of a sequence.
pub struct FrameView<F> {
    pub embeddings: NumArray<F>,
    pub softmaxes: Vec<Categorical>,
}

impl<F: Real> FrameView<F> {
    pub fn compute(model: &Model<F>, frames: &NumArray<F>) -> Result<Self> {
        let mut rng = RngStream::new(0, 0);
        let embeddings = model.embed(frames, Mode::Infer, &mut rng)?;
        let logits = model.classify(&embeddings, Mode::Infer, &mut rng)?;
        let k = logits.shape()[1];
        let softmaxes = logits
            .data()
            .chunks(k)
            .map(|row| Categorical::from_weights(&softmax_slice(&row.iter().map(|v| v.as_f64()).collect::<Vec<_>>())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { embeddings, softmaxes })
    }

    /// Rows of `embeddings` at `indices`.
    pub fn gather(&self, indices: &[usize]) -> NumArray<F> {
        let d = self.embeddings.shape()[1];
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&self.embeddings.data()[i * d..(i + 1) * d]);
        }
        NumArray::new(vec![indices.len(), d], data).expect("sizes agree")
    }
}

/// Selected frame indices for one sequence, with the EFE trace when used.
pub struct Selection<F> {
    pub indices: Vec<usize>,
    pub view: Option<FrameView<F>>,
    pub trace: Option<SelectionResult>,
}

pub fn select_sequence<F: Real>(
    model: &Model<F>,
    confusion: &ConfusionModel,
    sample: &SequenceSample,
    budget: usize,
    selector: SelectorMode,
    efe_mode: &EfeMode,
) -> Result<Selection<F>> {
    let t = sample.num_frames();
    match selector {
        SelectorMode::UniformStride => Ok(Selection {
            indices: uniform_stride(t, budget),
            view: None,
            trace: None,
        }),
        SelectorMode::Efe => {
            let view = FrameView::compute(model, &sequence_frames(sample, None))?;
            let trace = select_frames(&view.softmaxes, confusion, budget, efe_mode)?;
            Ok(Selection {
                indices: trace.selected.clone(),
                view: Some(view),
                trace: Some(trace),
            })
        }
    }
}

/// Fraction of a sequence's planted frames among `selected`.
pub fn planted_recall(sample: &SequenceSample, selected: &[usize]) -> f64 {
    if sample.planted_frames.is_empty() {
        return 0.0;
    }
    let hit = sample.planted_frames.iter().filter(|p| selected.contains(p)).count();
    hit as f64 / sample.planted_frames.len() as f64
}
