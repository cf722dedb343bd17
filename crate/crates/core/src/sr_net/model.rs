//! Residual super-resolution backbone with optional Fourier blocks.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::fourier_ops::{check_grouping, FourierSRParams};
use crate::tensor::{load_tensor, save_tensor, Scalar, Tensor};

/// Starting point of inserted Fourier blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PluginInit {
    /// Lower branch gain 0.1 with the residual on.
    #[default]
    NearIdentity,
    /// Both fusion gains zero: the block is exactly the identity.
    Identity,
}

impl fmt::Display for PluginInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PluginInit::NearIdentity => "near_identity",
            PluginInit::Identity => "identity",
        })
    }
}

impl FromStr for PluginInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "near_identity" => Ok(PluginInit::NearIdentity),
            "identity" => Ok(PluginInit::Identity),
            _ => Err(Error::Config(format!("unknown plugin init `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SRModelConfig {
    pub channels: usize,
    pub blocks: usize,
    /// Upscaling factor; 1 builds a same-size probe model.
    pub scale: usize,
    /// Residual blocks that receive a Fourier block, each index `< blocks`.
    pub plugin_positions: Vec<usize>,
    pub rho: usize,
    pub seed: u64,
    pub plugin_init: PluginInit,
}

impl Default for SRModelConfig {
    fn default() -> Self {
        SRModelConfig {
            channels: 16,
            blocks: 2,
            scale: 2,
            plugin_positions: Vec::new(),
            rho: 4,
            seed: 0,
            plugin_init: PluginInit::NearIdentity,
        }
    }
}

pub const MODEL_KEYS: [&str; 7] = ["channels", "blocks", "scale", "plugin_positions", "rho", "seed", "plugin_init"];

fn parse_positions(text: &str, blocks: usize, seed: u64) -> Result<Vec<usize>> {
    let text = text.trim();
    if let Some(count) = text.strip_prefix("random:") {
        let count = count
            .parse()
            .map_err(|_| Error::Config(format!("bad plugin count in `{text}`")))?;
        return random_positions(blocks, count, seed);
    }
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("bad plugin position `{s}`"))))
        .collect()
}

/// `count` distinct block indices drawn from `seed`, sorted.
pub fn random_positions(blocks: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > blocks {
        return Err(Error::Config(format!("cannot place {count} plugins in {blocks} blocks")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_B10C);
    let mut v = sample(&mut rng, blocks, count).into_vec();
    v.sort_unstable();
    Ok(v)
}

impl SRModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        if !(1..=4).contains(&self.scale) {
            return Err(Error::Config(format!("scale {} not in 1..=4", self.scale)));
        }
        check_grouping(self.channels, self.rho)?;
        let mut seen = vec![false; self.blocks];
        for &p in &self.plugin_positions {
            if p >= self.blocks {
                return Err(Error::Config(format!(
                    "plugin position {p} out of range for {} blocks",
                    self.blocks
                )));
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(Error::Config(format!("plugin position {p} listed twice")));
            }
        }
        Ok(())
    }

    /// Reads the model keys of `kv`; `plugin_positions` accepts a comma list
    /// or `random:N`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = SRModelConfig::default();
        let blocks = kv.parse_or("blocks", d.blocks)?;
        let seed = kv.parse_or("seed", d.seed)?;
        let cfg = SRModelConfig {
            channels: kv.parse_or("channels", d.channels)?,
            blocks,
            scale: kv.parse_or("scale", d.scale)?,
            plugin_positions: match kv.get("plugin_positions") {
                Some(text) => parse_positions(text, blocks, seed)?,
                None => d.plugin_positions,
            },
            rho: kv.parse_or("rho", d.rho)?,
            seed,
            plugin_init: kv.parse_or("plugin_init", d.plugin_init)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("channels", self.channels);
        kv.set("blocks", self.blocks);
        kv.set("scale", self.scale);
        kv.set("plugin_positions", positions_text(&self.plugin_positions));
        kv.set("rho", self.rho);
        kv.set("seed", self.seed);
        kv.set("plugin_init", self.plugin_init);
        kv
    }

    pub fn set_positions_text(&mut self, text: &str) -> Result<()> {
        self.plugin_positions = parse_positions(text, self.blocks, self.seed)?;
        self.validate()
    }

    /// Closed-form trainable-parameter count of the backbone alone.
    pub fn backbone_param_count(&self) -> usize {
        let c = self.channels;
        let s2 = self.scale * self.scale;
        let head = 9 * c + c;
        let body = self.blocks * 2 * (9 * c * c + c);
        let tail = 9 * c * s2 + s2;
        head + body + tail
    }
}

pub fn positions_text(p: &[usize]) -> String {
    p.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// A built model: the graph plus the nodes the trainer needs.
#[derive(Debug, Clone)]
pub struct SRModel<T: Scalar = f64> {
    pub config: SRModelConfig,
    pub graph: Graph<T>,
    /// LR image `(1, h, w)`.
    pub input: NodeId,
    /// Prediction `(1, s·h, s·w)`.
    pub output: NodeId,
    /// HR target, same shape as the output.
    pub target: NodeId,
    pub l1_loss: NodeId,
    pub mse_loss: NodeId,
    /// Fourier block nodes, in block order.
    pub plugins: Vec<NodeId>,
}

fn conv_weight<T: Scalar>(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize, gain: f64) -> Tensor<T> {
    let bound = gain * (3.0 / (9 * c_in) as f64).sqrt();
    Tensor::from_fn(&[c_out, c_in, 3, 3], |_| T::of(rng.random_range(-bound..bound)))
}

/// Builds head conv → residual blocks → tail conv + pixel shuffle.
///
/// Backbone weights come from `cfg.seed` alone; plugin parameters are fixed,
/// so adding plugins never changes the backbone draw.
pub fn build_model<T: Scalar>(cfg: &SRModelConfig) -> Result<SRModel<T>> {
    cfg.validate()?;
    let (c, s) = (cfg.channels, cfg.scale);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut g = Graph::new();
    let input = g.input("lr", 1);
    let one = g.constant("head.shift.scale", Tensor::ones(&[1]));
    let shift = g.constant("head.shift.offset", Tensor::full(&[1], T::of(-0.5)));
    let centred = g.affine("head.shift", input, one, shift);

    let w = g.param("head.weight", conv_weight(&mut rng, c, 1, 2f64.sqrt()));
    let b = g.param("head.bias", Tensor::zeros(&[c]));
    let mut x = g.conv3x3("head.conv", centred, w, b);

    let mut plugins = Vec::new();
    for i in 0..cfg.blocks {
        let p = format!("block{i}");
        let w1 = g.param(&format!("{p}.conv1.weight"), conv_weight(&mut rng, c, c, 2f64.sqrt()));
        let b1 = g.param(&format!("{p}.conv1.bias"), Tensor::zeros(&[c]));
        let h = g.conv3x3(&format!("{p}.conv1"), x, w1, b1);
        let h = g.leaky_relu(&format!("{p}.act"), h);
        let w2 = g.param(&format!("{p}.conv2.weight"), conv_weight(&mut rng, c, c, 0.5));
        let b2 = g.param(&format!("{p}.conv2.bias"), Tensor::zeros(&[c]));
        let mut h = g.conv3x3(&format!("{p}.conv2"), h, w2, b2);
        if cfg.plugin_positions.contains(&i) {
            let params = match cfg.plugin_init {
                PluginInit::NearIdentity => FourierSRParams::plugin_init(c, cfg.rho)?,
                PluginInit::Identity => FourierSRParams::identity_plugin(c, cfg.rho)?,
            };
            h = g.fourier_sr(&format!("{p}.fsr"), h, &params);
            plugins.push(h);
        }
        x = g.add(&format!("{p}.skip"), x, h);
    }

    let w = g.param("tail.weight", conv_weight(&mut rng, s * s, c, 1.0));
    let b = g.param("tail.bias", Tensor::full(&[s * s], T::of(0.5)));
    let t = g.conv3x3("tail.conv", x, w, b);
    let output = g.pixel_shuffle("tail.shuffle", t, s);

    let target = g.input("hr", 1);
    let l1_loss = g.l1_loss("loss.l1", output, target);
    let mse_loss = g.mse_loss("loss.mse", output, target);
    Ok(SRModel {
        config: cfg.clone(),
        graph: g,
        input,
        output,
        target,
        l1_loss,
        mse_loss,
        plugins,
    })
}

pub const CHECKPOINT_CONFIG: &str = "config.txt";

impl<T: Scalar> SRModel<T> {
    /// Runs the model on one `(1, h, w)` LR image.
    pub fn predict(&mut self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        self.graph.set_input(self.input, lr.clone())?;
        self.graph.forward_to(self.output)?;
        Ok(self.graph.value(self.output).expect("evaluated").clone())
    }

    pub fn param_count(&self) -> usize {
        self.graph.param_count()
    }

    /// Writes `config.txt` and one tensor file per parameter into `dir`.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join(CHECKPOINT_CONFIG);
        fs::write(&cfg_path, self.config.to_kv().to_text()).map_err(|e| Error::io(&cfg_path, e))?;
        for id in self.graph.params() {
            let t = self.graph.value(id).expect("param value");
            save_tensor(t, dir.join(format!("{}.fsrt", self.graph.name(id))))?;
        }
        Ok(())
    }

    pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cfg_path = dir.join(CHECKPOINT_CONFIG);
        let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let kv = KeyValues::parse(&text)?;
        kv.reject_unknown(&MODEL_KEYS)?;
        let mut model = build_model(&SRModelConfig::from_kv(&kv)?)?;
        for id in model.graph.params() {
            let t = load_tensor(dir.join(format!("{}.fsrt", model.graph.name(id))))?;
            model.graph.set_value(id, t)?;
        }
        Ok(model)
    }
}
