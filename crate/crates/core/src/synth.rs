//! Procedural interacting two-hand poses and penetrated variants of them.
//!
//! A clean pose starts from a scenario template (wrist orientations, finger
//! flexion, an initial relative translation and an approach direction),
//! gets bounded jitter, and is then slid along the approach direction until
//! the hands first touch, stopping a fixed gap short of contact. Penetrated
//! variants add Gaussian noise to a clean pose until the hands interpenetrate.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::collision::{penetrates_with, state_penetration_depth, InsideTest};
use crate::error::{CoreError, Result};
use crate::exec::Execution;
use crate::hand::{skin, Chirality, HandModel, HandParams};
use crate::state::TwoHandState;

/// Anatomical flexion range per finger joint, radians.
pub const FLEX_MIN: f64 = -0.2;
pub const FLEX_MAX: f64 = 1.8;

/// Templates with a wrist rotation closer than this to a half turn are
/// rejected; jitter must not push a joint across the axis-angle wrap.
const MAX_TEMPLATE_ANGLE: f64 = 0.8 * std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    Prayer,
    Clasp,
    Cross,
    Pinch,
    Free,
}

impl Scenario {
    pub const ALL: [Scenario; 5] =
        [Scenario::Prayer, Scenario::Clasp, Scenario::Cross, Scenario::Pinch, Scenario::Free];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Prayer => "prayer",
            Scenario::Clasp => "clasp",
            Scenario::Cross => "cross",
            Scenario::Pinch => "pinch",
            Scenario::Free => "free",
        }
    }

    fn template_text(self) -> &'static str {
        match self {
            Scenario::Prayer => include_str!("../templates/prayer.txt"),
            Scenario::Clasp => include_str!("../templates/clasp.txt"),
            Scenario::Cross => include_str!("../templates/cross.txt"),
            Scenario::Pinch => include_str!("../templates/pinch.txt"),
            Scenario::Free => include_str!("../templates/free.txt"),
        }
    }

    pub fn template(self) -> ScenarioTemplate {
        ScenarioTemplate::parse(self.template_text()).expect("bundled templates are valid")
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| CoreError::Corpus(format!("unknown scenario `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTemplate {
    pub name: String,
    /// Wrist axis-angle of each hand.
    pub left_global: Vector3<f64>,
    pub right_global: Vector3<f64>,
    /// Flexion per finger joint, (base, middle, distal) for thumb to pinky.
    pub left_flex: [f64; 15],
    pub right_flex: [f64; 15],
    /// Starting right-root offset from the left root; must be separated.
    pub relative_translation: Vector3<f64>,
    /// Unit direction the right hand travels to meet the left.
    pub approach: Vector3<f64>,
    pub jitter_flex: f64,
    pub jitter_global: f64,
    pub jitter_lateral: f64,
}

fn parse_floats<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let vals: Vec<f64> = value
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| CoreError::Config(format!("{key}: `{t}`: {e}"))))
        .collect::<Result<_>>()?;
    vals.try_into()
        .map_err(|v: Vec<f64>| CoreError::Config(format!("{key}: expected {N} numbers, got {}", v.len())))
}

/// `x 90, z -35` is `R_x(90°) · R_z(−35°)`; empty means identity.
fn parse_rotation(key: &str, value: &str) -> Result<Vector3<f64>> {
    let mut r = Rotation3::identity();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (axis, deg) = part
            .split_once(' ')
            .ok_or_else(|| CoreError::Config(format!("{key}: expected `<axis> <degrees>`, got `{part}`")))?;
        let deg: f64 = deg
            .trim()
            .parse()
            .map_err(|e| CoreError::Config(format!("{key}: `{deg}`: {e}")))?;
        let axis = match axis {
            "x" => Vector3::x_axis(),
            "y" => Vector3::y_axis(),
            "z" => Vector3::z_axis(),
            other => return Err(CoreError::Config(format!("{key}: unknown axis `{other}`"))),
        };
        r *= Rotation3::from_axis_angle(&axis, deg.to_radians());
    }
    let aa = r.scaled_axis();
    if aa.norm() > MAX_TEMPLATE_ANGLE {
        return Err(CoreError::Config(format!(
            "{key}: rotation of {:.1}° is too close to a half turn",
            aa.norm().to_degrees()
        )));
    }
    Ok(aa)
}

impl ScenarioTemplate {
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("template line without `=`: `{line}`")))?;
            if fields.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(CoreError::Config(format!("duplicate template key `{}`", k.trim())));
            }
        }
        let mut take = |k: &str| {
            fields.remove(k).ok_or_else(|| CoreError::Config(format!("template missing `{k}`")))
        };
        let name = take("name")?;
        let left_global = parse_rotation("left.global", &take("left.global")?)?;
        let right_global = parse_rotation("right.global", &take("right.global")?)?;
        let left_flex = parse_floats::<15>("left.flex", &take("left.flex")?)?;
        let right_flex = parse_floats::<15>("right.flex", &take("right.flex")?)?;
        let rel = parse_floats::<3>("relative_translation", &take("relative_translation")?)?;
        let approach = parse_floats::<3>("approach", &take("approach")?)?;
        let [jitter_flex] = parse_floats::<1>("jitter.flex", &take("jitter.flex")?)?;
        let [jitter_global] = parse_floats::<1>("jitter.global", &take("jitter.global")?)?;
        let [jitter_lateral] = parse_floats::<1>("jitter.lateral", &take("jitter.lateral")?)?;
        if let Some(k) = fields.keys().next() {
            return Err(CoreError::Config(format!("unknown template key `{k}`")));
        }
        let approach = Vector3::from(approach);
        if approach.norm() == 0.0 {
            return Err(CoreError::Config("approach direction is zero".into()));
        }
        if left_flex.iter().chain(&right_flex).any(|f| !(FLEX_MIN..=FLEX_MAX).contains(f)) {
            return Err(CoreError::Config(format!("flexion outside [{FLEX_MIN}, {FLEX_MAX}]")));
        }
        Ok(Self {
            name,
            left_global,
            right_global,
            left_flex,
            right_flex,
            relative_translation: Vector3::from(rel),
            approach: approach.normalize(),
            jitter_flex,
            jitter_global,
            jitter_lateral,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    /// Multiplies every jitter amplitude, including the shape spread; 0
    /// reproduces the template.
    pub jitter_scale: f64,
    /// Shape multipliers are drawn from `1 ± shape_spread`.
    pub shape_spread: f64,
    /// Distance kept between the hands after sliding into contact, mm.
    pub contact_gap: f64,
    pub max_rejections: usize,
    /// Perturbation noise: radians per pose coordinate.
    pub pose_sigma: f64,
    /// Perturbation noise: millimeters per relative-translation coordinate.
    pub translation_sigma: f64,
    pub max_perturb_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            jitter_scale: 1.0,
            shape_spread: 0.1,
            contact_gap: 1.5,
            max_rejections: 100,
            pose_sigma: 0.08,
            translation_sigma: 3.0,
            max_perturb_attempts: 200,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("jitter_scale", self.jitter_scale),
            ("shape_spread", self.shape_spread),
            ("contact_gap", self.contact_gap),
            ("pose_sigma", self.pose_sigma),
            ("translation_sigma", self.translation_sigma),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CoreError::Config(format!("synth {k} = {v} must be finite and >= 0")));
            }
        }
        if self.shape_spread >= 0.5 {
            return Err(CoreError::Config("synth shape_spread must be < 0.5".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, amplitude: f64) -> f64 {
    amplitude * rng.random_range(-1.0..=1.0)
}

fn jittered_hand(
    rng: &mut impl Rng,
    chirality: Chirality,
    global: &Vector3<f64>,
    flex: &[f64; 15],
    tpl: &ScenarioTemplate,
    cfg: &SynthConfig,
    model: &HandModel,
) -> HandParams {
    let s = cfg.jitter_scale;
    let mut p = HandParams::rest(chirality);
    for v in p.shape.iter_mut() {
        *v = 1.0 + uniform(rng, cfg.shape_spread * s);
    }
    let wobble = Vector3::from_fn(|_, _| uniform(rng, tpl.jitter_global * s));
    let g = Rotation3::new(wobble) * Rotation3::new(*global);
    p.set_joint_axis_angle(0, &g.scaled_axis());
    for finger in 0..5 {
        let axis = model.tree.flexion_axis(finger);
        for seg in 0..3 {
            let k = 3 * finger + seg;
            let angle = (flex[k] + uniform(rng, tpl.jitter_flex * s)).clamp(FLEX_MIN, FLEX_MAX);
            p.set_joint_axis_angle(1 + k, &(axis * angle));
        }
    }
    p
}

/// Slides the right hand along `approach` from its current position until
/// the hands first touch, then backs off by `gap`. `None` if the start
/// already penetrates, no contact happens within `reach`, or the final
/// state still penetrates.
fn settle(state: &TwoHandState, approach: &Vector3<f64>, gap: f64, model: &HandModel) -> Option<TwoHandState> {
    const STEP: f64 = 2.0;
    const TOLERANCE: f64 = 1e-3;
    let reach = 3.0 * state.relative_translation().norm() + 50.0;
    let left = skin(&state.left, model);
    let left_in = InsideTest::new(&left);
    let right = skin(&state.right, model);
    let right_in = InsideTest::new(&right);
    let hits = |s: f64| {
        let t = approach * s;
        let mut moved = right.clone();
        moved.vertices.iter_mut().for_each(|v| *v += t);
        penetrates_with(&left, &left_in, &moved, &right_in.translated(&t))
    };
    if hits(0.0) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, STEP);
    while !hits(hi) {
        lo = hi;
        hi += STEP;
        if hi > reach {
            return None;
        }
    }
    while hi - lo > TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if hits(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut out = state.clone();
    out.right.root_translation += approach * (lo - gap);
    (state_penetration_depth(&out, model) == 0.0).then_some(out)
}

/// A penetration-free interacting pose for `scenario`, left root at the
/// origin.
pub fn sample_clean_pose(
    rng: &mut impl Rng,
    scenario: Scenario,
    model: &HandModel,
    cfg: &SynthConfig,
) -> Result<TwoHandState> {
    let tpl = scenario.template();
    sample_clean_from_template(rng, &tpl, model, cfg)
}

pub fn sample_clean_from_template(
    rng: &mut impl Rng,
    tpl: &ScenarioTemplate,
    model: &HandModel,
    cfg: &SynthConfig,
) -> Result<TwoHandState> {
    let (e1, e2) = lateral_basis(&tpl.approach);
    for _ in 0..cfg.max_rejections {
        let left = jittered_hand(rng, Chirality::Left, &tpl.left_global, &tpl.left_flex, tpl, cfg, model);
        let mut right =
            jittered_hand(rng, Chirality::Right, &tpl.right_global, &tpl.right_flex, tpl, cfg, model);
        let lateral = tpl.jitter_lateral * cfg.jitter_scale;
        right.root_translation =
            tpl.relative_translation + e1 * uniform(rng, lateral) + e2 * uniform(rng, lateral);
        let state = TwoHandState { left, right };
        if let Some(settled) = settle(&state, &tpl.approach, cfg.contact_gap, model) {
            return Ok(settled);
        }
    }
    Err(CoreError::Exhausted { what: format!("clean `{}` pose", tpl.name), attempts: cfg.max_rejections })
}

fn lateral_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = Unit::new_normalize(n.cross(&helper)).into_inner();
    (e1, n.cross(&e1))
}

/// Adds `N(0, pose_sigma²)` to every pose coordinate of both hands and
/// `N(0, translation_sigma²)` to the relative translation of a fresh copy
/// of `clean`, until the hands interpenetrate. Returns the state, its
/// penetration depth and the number of attempts used.
pub fn perturb_until_penetration(
    clean: &TwoHandState,
    rng: &mut impl Rng,
    model: &HandModel,
    pose_sigma: f64,
    translation_sigma: f64,
    max_attempts: usize,
) -> Result<(TwoHandState, f64, usize)> {
    let pose_noise = Normal::new(0.0, pose_sigma).map_err(|e| CoreError::Config(e.to_string()))?;
    let trans_noise = Normal::new(0.0, translation_sigma).map_err(|e| CoreError::Config(e.to_string()))?;
    for attempt in 1..=max_attempts {
        let mut s = clean.clone();
        for v in s.left.pose.iter_mut().chain(s.right.pose.iter_mut()) {
            *v += pose_noise.sample(rng);
        }
        for k in 0..3 {
            s.right.root_translation[k] += trans_noise.sample(rng);
        }
        s.left.canonicalize();
        s.right.canonicalize();
        let depth = state_penetration_depth(&s, model);
        if depth > 0.0 {
            return Ok((s, depth, attempt));
        }
    }
    Err(CoreError::Exhausted { what: "penetrating perturbation".into(), attempts: max_attempts })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusRecord {
    pub id: u64,
    pub scenario: Scenario,
    pub seed: u64,
    pub clean: TwoHandState,
    /// The penetrated condition; in refined corpora, the refined output.
    pub penetrated: TwoHandState,
    pub penetration_depth: f64,
}

/// Record `index` of the corpus seeded with `corpus_seed`. Scenarios cycle
/// in a fixed order; the record's generator is seeded with
/// `corpus_seed ^ index`.
pub fn generate_record(corpus_seed: u64, index: u64, model: &HandModel, cfg: &SynthConfig) -> Result<CorpusRecord> {
    let seed = corpus_seed ^ index;
    let mut rng = duohand_nn::rng::seeded(seed);
    let scenario = Scenario::ALL[(index % Scenario::ALL.len() as u64) as usize];
    let clean = sample_clean_pose(&mut rng, scenario, model, cfg)?;
    let (penetrated, depth, _) = perturb_until_penetration(
        &clean,
        &mut rng,
        model,
        cfg.pose_sigma,
        cfg.translation_sigma,
        cfg.max_perturb_attempts,
    )?;
    Ok(CorpusRecord { id: index, scenario, seed, clean, penetrated, penetration_depth: depth })
}

/// Records for the indices in `range`, in index order.
pub fn generate_corpus(
    corpus_seed: u64,
    range: std::ops::Range<u64>,
    model: &HandModel,
    cfg: &SynthConfig,
    exec: Execution,
) -> Result<Vec<CorpusRecord>> {
    cfg.validate()?;
    let start = range.start;
    let n = (range.end.saturating_sub(start)) as usize;
    exec.try_map(n, |k| generate_record(corpus_seed, start + k as u64, model, cfg))
}
