//! Flat parameter storage with named, tagged tensors.

use std::collections::BTreeSet;
use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::ModelError;

/// Component a tensor belongs to, used to select what fine-tuning updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Output = 0,
    Norm = 1,
    Encoder = 2,
    Decoder = 3,
    Embedding = 4,
}

impl Tag {
    pub const ALL: [Tag; 5] = [Tag::Output, Tag::Norm, Tag::Encoder, Tag::Decoder, Tag::Embedding];

    pub fn from_u8(v: u8) -> Option<Tag> {
        Tag::ALL.get(v as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Output => "output",
            Tag::Norm => "norm",
            Tag::Encoder => "encoder",
            Tag::Decoder => "decoder",
            Tag::Embedding => "embedding",
        }
    }

    pub fn parse(s: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

/// Set of components updated during fine-tuning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentMask(BTreeSet<Tag>);

impl ComponentMask {
    pub fn new(tags: impl IntoIterator<Item = Tag>) -> Result<Self, ModelError> {
        let set: BTreeSet<Tag> = tags.into_iter().collect();
        if set.is_empty() {
            return Err(ModelError::EmptyMask);
        }
        Ok(Self(set))
    }

    /// Every component, embeddings included.
    pub fn full() -> Self {
        Self(Tag::ALL.into_iter().collect())
    }

    pub fn contains(&self, tag: Tag) -> bool {
        self.0.contains(&tag)
    }

    pub fn tags(&self) -> impl Iterator<Item = Tag> + '_ {
        self.0.iter().copied()
    }

    pub fn is_full(&self) -> bool {
        self.0.len() == Tag::ALL.len()
    }

    /// Parses `full` or a `+`-joined list such as `output+encoder`.
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        if s == "full" {
            return Ok(Self::full());
        }
        let tags = s
            .split('+')
            .filter(|p| !p.is_empty())
            .map(|p| Tag::parse(p).ok_or_else(|| ModelError::InvalidConfig(format!("unknown component `{p}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(tags)
    }

    pub fn label(&self) -> String {
        if self.is_full() {
            return "full".into();
        }
        self.0.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("+")
    }

    /// The six combinations compared in the fine-tuning study.
    pub fn sweep() -> Vec<ComponentMask> {
        use Tag::*;
        [
            vec![Output],
            vec![Output, Norm],
            vec![Output, Encoder],
            vec![Output, Decoder],
            vec![Output, Encoder, Decoder],
        ]
        .into_iter()
        .map(|t| Self::new(t).expect("non-empty"))
        .chain(std::iter::once(Self::full()))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub tag: Tag,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Tensor ids of one attention block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIds {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIds {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfnIds {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderIds {
    pub attn: AttnIds,
    pub norm1: NormIds,
    pub ffn: FfnIds,
    pub norm2: NormIds,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecoderIds {
    pub self_attn: AttnIds,
    pub norm1: NormIds,
    pub cross: AttnIds,
    pub norm2: NormIds,
    pub ffn: FfnIds,
    pub norm3: NormIds,
}

#[derive(Debug, Clone)]
pub(crate) struct Ids {
    pub spatial_w1: usize,
    pub spatial_b1: usize,
    pub spatial_w2: usize,
    pub spatial_b2: usize,
    pub position: usize,
    pub query: usize,
    pub encoder: Vec<EncoderIds>,
    pub decoder: Vec<DecoderIds>,
    pub out_w: usize,
    pub out_b: usize,
}

/// Ordered tensor list with offsets into one flat buffer.
#[derive(Debug, Clone)]
pub struct Layout {
    specs: Vec<TensorSpec>,
    total: usize,
    pub(crate) ids: Ids,
}

struct Builder {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, tag: Tag, shape: &[usize]) -> usize {
        let spec = TensorSpec {
            name,
            tag,
            shape: shape.to_vec(),
            offset: self.total,
        };
        self.total += spec.len();
        self.specs.push(spec);
        self.specs.len() - 1
    }

    fn attn(&mut self, prefix: &str, tag: Tag, d: usize) -> AttnIds {
        let mut m = |n: &str| self.add(format!("{prefix}.{n}"), tag, &[d, d]);
        let (wq, wk, wv, wo) = (m("wq"), m("wk"), m("wv"), m("wo"));
        let mut v = |n: &str| self.add(format!("{prefix}.{n}"), tag, &[d]);
        let (bq, bk, bv, bo) = (v("bq"), v("bk"), v("bv"), v("bo"));
        AttnIds {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gain: self.add(format!("{prefix}.gain"), Tag::Norm, &[d]),
            bias: self.add(format!("{prefix}.bias"), Tag::Norm, &[d]),
        }
    }

    fn ffn(&mut self, prefix: &str, tag: Tag, d: usize, h: usize) -> FfnIds {
        FfnIds {
            w1: self.add(format!("{prefix}.w1"), tag, &[d, h]),
            b1: self.add(format!("{prefix}.b1"), tag, &[h]),
            w2: self.add(format!("{prefix}.w2"), tag, &[h, d]),
            b2: self.add(format!("{prefix}.b2"), tag, &[d]),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_ffn);
        let mut b = Builder {
            specs: Vec::new(),
            total: 0,
        };
        let spatial_w1 = b.add("embed.spatial.w1".into(), Tag::Embedding, &[2, d]);
        let spatial_b1 = b.add("embed.spatial.b1".into(), Tag::Embedding, &[d]);
        let spatial_w2 = b.add("embed.spatial.w2".into(), Tag::Embedding, &[d, d]);
        let spatial_b2 = b.add("embed.spatial.b2".into(), Tag::Embedding, &[d]);
        let position = b.add("embed.position".into(), Tag::Embedding, &[cfg.max_len, d]);
        let query = b.add("embed.query".into(), Tag::Embedding, &[cfg.max_len, d]);
        let encoder = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderIds {
                    attn: b.attn(&format!("{p}.self"), Tag::Encoder, d),
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), Tag::Encoder, d, f),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                }
            })
            .collect();
        let decoder = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderIds {
                    self_attn: b.attn(&format!("{p}.self"), Tag::Decoder, d),
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    cross: b.attn(&format!("{p}.cross"), Tag::Decoder, d),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), Tag::Decoder, d, f),
                    norm3: b.norm(&format!("{p}.norm3"), d),
                }
            })
            .collect();
        let out_w = b.add("output.w".into(), Tag::Output, &[d, cfg.n_classes]);
        let out_b = b.add("output.b".into(), Tag::Output, &[cfg.n_classes]);
        Layout {
            specs: b.specs,
            total: b.total,
            ids: Ids {
                spatial_w1,
                spatial_b1,
                spatial_w2,
                spatial_b2,
                position,
                query,
                encoder,
                decoder,
                out_w,
                out_b,
            },
        }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Flat index ranges of the tensors whose tag is in `mask`.
    pub fn ranges_for(&self, mask: &ComponentMask) -> Vec<Range<usize>> {
        self.specs
            .iter()
            .filter(|s| mask.contains(s.tag))
            .map(|s| s.range())
            .collect()
    }

    pub(crate) fn mat<'a>(&self, data: &'a [f64], id: usize) -> ArrayView2<'a, f64> {
        let s = &self.specs[id];
        ArrayView2::from_shape((s.shape[0], s.shape[1]), &data[s.range()]).expect("matrix tensor")
    }

    pub(crate) fn vec<'a>(&self, data: &'a [f64], id: usize) -> ArrayView1<'a, f64> {
        let s = &self.specs[id];
        ArrayView1::from(&data[s.range()])
    }

    pub(crate) fn mat_mut<'a>(&self, data: &'a mut [f64], id: usize) -> ArrayViewMut2<'a, f64> {
        let s = &self.specs[id];
        ArrayViewMut2::from_shape((s.shape[0], s.shape[1]), &mut data[s.range()]).expect("matrix tensor")
    }
}

/// Model weights: a configuration, its layout and one flat buffer.
#[derive(Debug, Clone)]
pub struct Transformer {
    config: ModelConfig,
    layout: Layout,
    data: Vec<f64>,
}

impl PartialEq for Transformer {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.data == other.data
    }
}

impl Transformer {
    /// Xavier-uniform matrices, N(0, 0.02) embedding tables, unit norm
    /// gains and zero biases.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut data = vec![0.0; layout.total()];
        let normal = Normal::new(0.0, 0.02).expect("valid sigma");
        let ids = &layout.ids;
        for (id, spec) in layout.specs.iter().enumerate() {
            let slot = &mut data[spec.range()];
            if id == ids.position || id == ids.query {
                slot.iter_mut().for_each(|x| *x = normal.sample(rng));
            } else if spec.shape.len() == 2 {
                let a = (6.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt();
                let u = Uniform::new_inclusive(-a, a).expect("valid range");
                slot.iter_mut().for_each(|x| *x = u.sample(rng));
            } else if spec.name.ends_with(".gain") {
                slot.fill(1.0);
            }
        }
        Ok(Self { config, layout, data })
    }

    /// Builds a model from raw values laid out per `Layout::new(&config)`.
    pub fn from_parts(config: ModelConfig, data: Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if data.len() != layout.total() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} values, got {}",
                layout.total(),
                data.len()
            )));
        }
        Ok(Self { config, layout, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.data
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|s| &self.data[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.layout.find(name)?.range();
        Some(&mut self.data[r])
    }

    /// Rounds every value to single precision, as a checkpoint stores it.
    pub fn round_to_f32(&mut self) {
        self.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
}
