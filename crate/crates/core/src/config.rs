//! Key-value run configuration.
//!
//! Text form: one `key = value` per line, `#` starts a comment. Every key
//! must be registered in [`KEYS`]; unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::collision::{CollisionConfig, GmofForm};
use crate::corpus::sha256_hex;
use crate::diffusion::{DenoiserConfig, GuidanceConfig, TrainConfig};
use crate::error::{CoreError, Result};
use crate::fusion::{DistillConfig, FusionConfig};
use crate::hand::Tessellation;
use crate::render::RenderConfig;
use crate::synth::SynthConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Text,
    Choice(&'static [&'static str]),
}

#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub kind: Kind,
    pub doc: &'static str,
}

const fn key(key: &'static str, default: &'static str, kind: Kind, doc: &'static str) -> KeySpec {
    KeySpec { key, default, kind, doc }
}

use Kind::{Choice, Float, Int, Text};

pub const KEYS: &[KeySpec] = &[
    key("run.out_dir", "out", Text, "directory receiving every artifact"),
    key("run.jobs", "1", Int, "worker threads; results do not depend on it"),
    key("mesh.capsule_u", "8", Int, "vertices around each capsule ring"),
    key("mesh.capsule_v", "6", Int, "rings per capsule"),
    key("render.resolution", "64", Int, "raster width and height in pixels"),
    key("render.fit_margin", "0.1", Float, "window fraction left around the two-hand box"),
    key("collision.d_threshold_mm", "4", Float, "pair distance threshold"),
    key("collision.cos_theta_threshold", "-0.5", Float, "pairs need a normal cosine below this"),
    key("collision.rho_mm", "5", Float, "robust penalty scale"),
    key("collision.gmof_form", "standard", Choice(&["standard", "as_printed"]), "robust penalty form"),
    key("synth.seed", "7", Int, "corpus seed"),
    key("synth.train_count", "5000", Int, "training records"),
    key("synth.val_count", "500", Int, "validation records"),
    key("synth.test_count", "200", Int, "test records"),
    key("synth.jitter_scale", "1", Float, "scales every template jitter amplitude"),
    key("synth.shape_spread", "0.1", Float, "shape multipliers drawn from 1 +- spread"),
    key("synth.contact_gap_mm", "1.5", Float, "gap kept after sliding the hands into contact"),
    key("synth.max_rejections", "100", Int, "clean-pose attempts before giving up"),
    key("synth.pose_sigma", "0.08", Float, "perturbation noise per pose coordinate, radians"),
    key("synth.translation_sigma_mm", "3", Float, "perturbation noise per translation coordinate"),
    key("synth.max_perturb_attempts", "200", Int, "perturbation attempts before giving up"),
    key("diffusion.T", "1000", Int, "noising steps"),
    key("diffusion.ddim_steps", "50", Int, "sampling steps"),
    key("diffusion.lambda", "3e-5", Float, "guidance step in normalized units"),
    key("diffusion.n_grad_iters", "3", Int, "guidance iterations per sampling step"),
    key("diffusion.seed", "1", Int, "initialization, batching and sampling seed"),
    key("diffusion.train_steps", "2000", Int, "optimizer steps"),
    key("diffusion.batch_size", "32", Int, "samples per optimizer step"),
    key("diffusion.lr", "1e-3", Float, "Adam learning rate"),
    key("diffusion.weight_decay", "0", Float, "decoupled weight decay"),
    key("diffusion.d_model", "128", Int, "token width"),
    key("diffusion.heads", "4", Int, "attention heads"),
    key("diffusion.layers", "4", Int, "encoder layers"),
    key("diffusion.d_ff", "256", Int, "feed-forward width"),
    key("diffusion.train_corpus", "", Text, "training corpus; empty means <out_dir>/train.corpus"),
    key("fusion.image_tokens", "49", Int, "image tokens l"),
    key("fusion.image_dim", "128", Int, "image token width d"),
    key("fusion.prior_tokens", "16", Int, "tokens per prior l_p (square)"),
    key("fusion.prior_dim", "64", Int, "prior token width d_p"),
    key("fusion.heads", "4", Int, "attention heads"),
    key("fusion.layers", "2", Int, "encoder layers of the student and of the integration encoder"),
    key("fusion.seed", "3", Int, "teacher, student and batching seed"),
    key("fusion.samples", "100", Int, "records rendered for distillation"),
    key("fusion.train_steps", "2000", Int, "distillation steps"),
    key("fusion.batch_size", "8", Int, "samples per distillation step"),
    key("fusion.lr", "1e-3", Float, "Adam learning rate"),
    key("fusion.corpus", "", Text, "records to render; empty means <out_dir>/train.corpus"),
    key("refine.input", "", Text, "corpus to refine; empty means <out_dir>/test.corpus"),
    key("refine.weights", "", Text, "denoiser weights; empty means <out_dir>/diffusion.weights"),
    key("eval.pred", "", Text, "predictions; empty means <out_dir>/refined.corpus"),
    key("eval.gt", "", Text, "ground truth; empty means <out_dir>/test.corpus"),
    key(
        "eval.pred_column",
        "auto",
        Choice(&["auto", "clean", "penetrated"]),
        "state column of the prediction file; auto reads refined outputs or clean states",
    ),
    key("export.input", "", Text, "corpus to export from; empty means <out_dir>/test.corpus"),
    key("export.record", "0", Int, "record id to export"),
    key("export.column", "penetrated", Choice(&["clean", "penetrated"]), "state column to export"),
];

pub fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<&'static str, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|k| (k.key, k.default.to_string())).collect() }
    }
}

fn check_value(spec: &KeySpec, value: &str) -> Result<()> {
    let bad = |what: &str| Err(CoreError::Config(format!("{} expects {what}, got `{value}`", spec.key)));
    match spec.kind {
        Kind::Int => {
            if value.parse::<u64>().is_err() {
                return bad("a non-negative integer");
            }
        }
        Kind::Float => match value.parse::<f64>() {
            Ok(v) if v.is_finite() => {}
            _ => return bad("a finite number"),
        },
        Kind::Choice(options) => {
            if !options.contains(&value) {
                return bad(&format!("one of {}", options.join("|")));
            }
        }
        Kind::Text => {
            if value.contains('\n') {
                return bad("a single line");
            }
        }
    }
    Ok(())
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let spec = spec(key).ok_or_else(|| CoreError::Config(format!("unknown key `{key}`")))?;
        let value = value.trim();
        check_value(spec, value)?;
        self.values.insert(spec.key, value.to_string());
        Ok(())
    }

    /// `key=value`, as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CoreError::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(CoreError::Config(format!("line {}: `{k}` set twice", n + 1)));
            }
            self.set(k, v).map_err(|e| CoreError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).unwrap_or_else(|| panic!("unregistered key `{key}`"))
    }

    pub fn int(&self, key: &str) -> u64 {
        self.get(key).parse().expect("validated on set")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.int(key) as usize
    }

    pub fn float(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated on set")
    }

    /// Canonical text: every key, sorted, `key = value`.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Digest over the keys under the given prefixes.
    pub fn hash_of(&self, prefixes: &[&str]) -> String {
        let text: String = self
            .values
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        sha256_hex(text.as_bytes())
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("run.out_dir"))
    }

    /// A path key, falling back to `<out_dir>/<default_name>` when empty.
    pub fn path_or(&self, key: &str, default_name: &str) -> PathBuf {
        match self.get(key) {
            "" => self.out_dir().join(default_name),
            p => Path::new(p).to_path_buf(),
        }
    }

    pub fn tessellation(&self) -> Result<Tessellation> {
        let t = Tessellation { capsule_u: self.usize("mesh.capsule_u"), capsule_v: self.usize("mesh.capsule_v") };
        t.validate()?;
        Ok(t)
    }

    pub fn render(&self) -> Result<RenderConfig> {
        let r = RenderConfig {
            resolution: self.usize("render.resolution"),
            fit_margin: self.float("render.fit_margin"),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn collision(&self) -> Result<CollisionConfig> {
        let c = CollisionConfig {
            d_threshold: self.float("collision.d_threshold_mm"),
            cos_theta_threshold: self.float("collision.cos_theta_threshold"),
            rho: self.float("collision.rho_mm"),
            form: self.get("collision.gmof_form").parse::<GmofForm>()?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let s = SynthConfig {
            jitter_scale: self.float("synth.jitter_scale"),
            shape_spread: self.float("synth.shape_spread"),
            contact_gap: self.float("synth.contact_gap_mm"),
            max_rejections: self.usize("synth.max_rejections"),
            pose_sigma: self.float("synth.pose_sigma"),
            translation_sigma: self.float("synth.translation_sigma_mm"),
            max_perturb_attempts: self.usize("synth.max_perturb_attempts"),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn denoiser(&self) -> Result<DenoiserConfig> {
        let d = DenoiserConfig {
            d_model: self.usize("diffusion.d_model"),
            heads: self.usize("diffusion.heads"),
            layers: self.usize("diffusion.layers"),
            d_ff: self.usize("diffusion.d_ff"),
            time_features: DenoiserConfig::default().time_features,
            t_max: self.usize("diffusion.T"),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn training(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            steps: self.usize("diffusion.train_steps"),
            batch_size: self.usize("diffusion.batch_size"),
            lr: self.float("diffusion.lr"),
            weight_decay: self.float("diffusion.weight_decay"),
            seed: self.int("diffusion.seed"),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn guidance(&self) -> Result<GuidanceConfig> {
        let g = GuidanceConfig {
            lambda: self.float("diffusion.lambda"),
            n_grad_iters: self.usize("diffusion.n_grad_iters"),
            ddim_steps: self.usize("diffusion.ddim_steps"),
        };
        g.validate()?;
        if g.ddim_steps > self.usize("diffusion.T") {
            return Err(CoreError::Config("diffusion.ddim_steps exceeds diffusion.T".into()));
        }
        Ok(g)
    }

    pub fn fusion(&self) -> Result<FusionConfig> {
        let f = FusionConfig {
            image_tokens: self.usize("fusion.image_tokens"),
            image_dim: self.usize("fusion.image_dim"),
            prior_tokens: self.usize("fusion.prior_tokens"),
            prior_dim: self.usize("fusion.prior_dim"),
            heads: self.usize("fusion.heads"),
            integrate_layers: self.usize("fusion.layers"),
            prior_layers: self.usize("fusion.layers"),
            d_ff: 2 * self.usize("fusion.image_dim"),
        };
        f.validate()?;
        Ok(f)
    }
}

impl Config {
    pub fn distill(&self) -> Result<DistillConfig> {
        let d = DistillConfig {
            steps: self.usize("fusion.train_steps"),
            batch_size: self.usize("fusion.batch_size"),
            lr: self.float("fusion.lr"),
            seed: self.int("fusion.seed"),
        };
        d.validate()?;
        Ok(d)
    }
}
