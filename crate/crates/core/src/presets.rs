//! Named loss configurations for ablation grids.
//!
//! A preset chain joins tokens with `+`, e.g. `cdc+epochR+number357`. One
//! manifold token picks the loss network kind; the rest modify it. Cell
//! labels are derived from the parsed chain, not from token order, so
//! `epochR+cdc` and `cdc+epochR` both label as `+CDC+epochR`.
//!
//! ```
//! use manifold_loss::presets::Preset;
//!
//! let p = Preset::parse("inn+epochR+number357").unwrap();
//! assert_eq!(p.label(), "+INN+epochR+Number(357)");
//! ```

use std::fmt;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::init::{InitScheme, ReinitPolicy};
use crate::manifolds::{ManifoldKind, RandomNetConfig};

pub const TOKENS: &[&str] = &[
    "original", "taylor", "cdc", "inn", "reverse", "epochR", "once", "kaiming", "xavier", "depth3", "depth7",
    "number357", "number555",
];

/// Grid names accepted wherever a preset chain is.
pub const GROUPS: &[&str] = &["main", "ablation"];

const MAIN: &[&str] = &[
    "original",
    "taylor",
    "taylor+epochR",
    "cdc",
    "cdc+epochR",
    "inn",
    "inn+epochR",
    "reverse",
    "reverse+epochR",
];

const ABLATION_EXTRA: &[&str] = &[
    "cdc+epochR+xavier",
    "inn+epochR+xavier",
    "cdc+epochR+depth3",
    "cdc+epochR+depth7",
    "inn+epochR+depth3",
    "inn+epochR+depth7",
    "cdc+epochR+number357",
    "cdc+epochR+number555",
    "inn+epochR+number357",
    "inn+epochR+number555",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Number {
    /// Three nets with kernels 3, 5 and 7.
    N357,
    /// Three nets with kernel 5.
    N555,
}

impl Number {
    pub fn kernels(self) -> [usize; 3] {
        match self {
            Number::N357 => [3, 5, 7],
            Number::N555 => [5, 5, 5],
        }
    }
}

/// A parsed preset chain.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Preset {
    pub kind: Option<ManifoldKind>,
    pub reinit: Option<ReinitPolicy>,
    pub init: Option<InitScheme>,
    pub depth: Option<usize>,
    pub number: Option<Number>,
}

fn unknown(name: &str) -> Error {
    Error::config(
        "preset",
        format!(
            "unknown preset `{name}`; available tokens: {}; groups: {}",
            TOKENS.join(", "),
            GROUPS.join(", ")
        ),
    )
}

fn set_once<T: PartialEq + Copy>(slot: &mut Option<T>, v: T, token: &str) -> Result<()> {
    match slot {
        Some(old) if *old != v => Err(Error::config("preset", format!("`{token}` conflicts with an earlier token"))),
        _ => {
            *slot = Some(v);
            Ok(())
        }
    }
}

impl Preset {
    pub fn parse(chain: &str) -> Result<Self> {
        let mut p = Preset::default();
        let mut original = false;
        for token in chain.split('+').map(str::trim) {
            match token {
                "original" => original = true,
                "taylor" => set_once(&mut p.kind, ManifoldKind::Taylor, token)?,
                "cdc" => set_once(&mut p.kind, ManifoldKind::Cdc, token)?,
                "inn" => set_once(&mut p.kind, ManifoldKind::Inn, token)?,
                "reverse" => set_once(&mut p.kind, ManifoldKind::Reverse, token)?,
                "epochR" => set_once(&mut p.reinit, ReinitPolicy::EachEpoch, token)?,
                "once" => set_once(&mut p.reinit, ReinitPolicy::Once, token)?,
                "kaiming" => set_once(&mut p.init, InitScheme::Kaiming, token)?,
                "xavier" => set_once(&mut p.init, InitScheme::Xavier, token)?,
                "depth3" => set_once(&mut p.depth, 3, token)?,
                "depth7" => set_once(&mut p.depth, 7, token)?,
                "number357" => set_once(&mut p.number, Number::N357, token)?,
                "number555" => set_once(&mut p.number, Number::N555, token)?,
                _ => return Err(unknown(token)),
            }
        }
        if original && p != Preset::default() {
            return Err(Error::config("preset", format!("`original` cannot be combined with other tokens in `{chain}`")));
        }
        if !original && p.kind.is_none() {
            return Err(Error::config("preset", format!("`{chain}` names no manifold (taylor, cdc, inn, reverse)")));
        }
        Ok(p)
    }

    /// Canonical label such as `+CDC(7)+epochR+Depth`.
    pub fn label(&self) -> String {
        let Some(kind) = self.kind else {
            return "Original".to_string();
        };
        let mut s = format!("+{}", kind.label());
        if let Some(d) = self.depth {
            s += &format!("({d})");
        }
        if self.reinit == Some(ReinitPolicy::EachEpoch) {
            s += "+epochR";
        }
        if self.init == Some(InitScheme::Xavier) {
            s += "+xavier";
        }
        if self.depth.is_some() {
            s += "+Depth";
        }
        match self.number {
            Some(Number::N357) => s += "+Number(357)",
            Some(Number::N555) => s += "+Number(555)",
            None => {}
        }
        s
    }

    /// Loss nets for this preset. `template` supplies every field the
    /// preset does not set.
    pub fn nets(&self, template: &RandomNetConfig) -> Vec<RandomNetConfig> {
        let Some(kind) = self.kind else {
            return Vec::new();
        };
        let mut net = RandomNetConfig {
            kind,
            ..template.clone()
        };
        if let Some(r) = self.reinit {
            net.reinit = r;
        }
        if let Some(i) = self.init {
            net.init = i;
        }
        if let Some(d) = self.depth {
            net.depth = d;
        }
        match self.number {
            None => vec![net],
            Some(n) => n
                .kernels()
                .iter()
                .map(|&k| RandomNetConfig {
                    kernel: k,
                    ..net.clone()
                })
                .collect(),
        }
    }

    /// `base` with its loss nets replaced by this preset's. The first net
    /// of `base`, if any, is the template for unset fields.
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let template = base.loss.nets.first().cloned().unwrap_or_default();
        let mut cfg = base.clone();
        cfg.loss.nets = self.nets(&template);
        cfg.presets = Vec::new();
        cfg
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// One grid cell: a label and the config it runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub label: String,
    pub config: ExperimentConfig,
}

/// Expands group names into their preset chains; other names pass through.
pub fn expand(names: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for n in names {
        match n.as_str() {
            "main" => out.extend(MAIN.iter().map(|s| s.to_string())),
            "ablation" => out.extend(MAIN.iter().chain(ABLATION_EXTRA).map(|s| s.to_string())),
            _ => out.push(n.clone()),
        }
    }
    out
}

/// Grid cells for `cfg`: one per distinct preset label in `cfg.presets`, or
/// a single cell running `cfg.loss` as written.
pub fn cells(cfg: &ExperimentConfig) -> Result<Vec<Cell>> {
    if cfg.presets.is_empty() {
        let label = if cfg.loss.prior_inactive() { "Original" } else { "custom" };
        return Ok(vec![Cell {
            label: label.to_string(),
            config: cfg.clone(),
        }]);
    }
    let mut out: Vec<Cell> = Vec::new();
    for chain in expand(&cfg.presets) {
        let p = Preset::parse(&chain)?;
        let label = p.label();
        if out.iter().all(|c| c.label != label) {
            out.push(Cell {
                label,
                config: p.apply(cfg),
            });
        }
    }
    Ok(out)
}
