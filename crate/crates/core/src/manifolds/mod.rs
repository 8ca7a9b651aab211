//! Fixed random-weight networks with a guaranteed structure.
//!
//! Each kind maps an image to a feature tensor and exposes the adjoint of
//! that map, so a feature-space distance can be differentiated with respect
//! to the image. Weights are drawn once per [`Manifold::draw`] call and are
//! never trained.

pub mod cdc;
pub mod inn;
pub mod reverse;
pub mod stack;
pub mod taylor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{InitScheme, ReinitPolicy};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use cdc::{cdc_layer, CdcNet};
pub use inn::{CouplingBlock, InnNet};
pub use reverse::{contraction_coefficient, gaussian_bank, Contraction, ReverseNet};
pub use stack::{Activation, ConvStack, StackTrace};
pub use taylor::TaylorNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    Taylor,
    Inn,
    Cdc,
    Reverse,
}

impl ManifoldKind {
    pub const ALL: [ManifoldKind; 4] = [
        ManifoldKind::Taylor,
        ManifoldKind::Inn,
        ManifoldKind::Cdc,
        ManifoldKind::Reverse,
    ];

    /// Short name used in configuration labels.
    pub fn label(&self) -> &'static str {
        match self {
            ManifoldKind::Taylor => "Taylor",
            ManifoldKind::Inn => "INN",
            ManifoldKind::Cdc => "CDC",
            ManifoldKind::Reverse => "Reverse",
        }
    }
}

/// Everything needed to draw one loss network.
///
/// `depth` is the layer count of the Taylor and CDC stacks and the number of
/// coupling blocks for INN. `theta` only affects CDC, `order_n` only Taylor,
/// `iterations_k` and `sigmas` only Reverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomNetConfig {
    pub kind: ManifoldKind,
    pub depth: usize,
    pub channels: usize,
    pub kernel: usize,
    pub theta: f64,
    pub order_n: usize,
    pub iterations_k: usize,
    pub sigmas: Vec<f64>,
    pub init: InitScheme,
    pub reinit: ReinitPolicy,
    pub seed: u64,
}

impl Default for RandomNetConfig {
    fn default() -> Self {
        RandomNetConfig {
            kind: ManifoldKind::Cdc,
            depth: 2,
            channels: 16,
            kernel: 3,
            theta: 0.7,
            order_n: 3,
            iterations_k: 5,
            sigmas: vec![0.5, 1.0, 2.0],
            init: InitScheme::Kaiming,
            reinit: ReinitPolicy::Once,
            seed: 0,
        }
    }
}

impl RandomNetConfig {
    pub fn of_kind(kind: ManifoldKind) -> Self {
        RandomNetConfig {
            kind,
            ..Default::default()
        }
    }

    /// Checks ranges; `path` prefixes the field name in errors.
    pub fn validate(&self, path: &str) -> Result<()> {
        let field = |name: &str| format!("{path}.{name}");
        if self.depth == 0 {
            return Err(Error::config(field("depth"), "must be at least 1"));
        }
        if self.channels == 0 {
            return Err(Error::config(field("channels"), "must be at least 1"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config(field("kernel"), "must be odd"));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::config(field("theta"), "must lie in [0, 1]"));
        }
        if self.iterations_k == 0 {
            return Err(Error::config(field("iterations_k"), "must be at least 1"));
        }
        if self.kind == ManifoldKind::Reverse {
            if self.sigmas.is_empty() {
                return Err(Error::config(field("sigmas"), "must not be empty"));
            }
            if self.sigmas.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
                return Err(Error::config(field("sigmas"), "must all be positive"));
            }
        }
        Ok(())
    }
}

/// A drawn loss network.
#[derive(Clone, Debug, PartialEq)]
pub enum Manifold {
    Taylor(TaylorNet),
    Inn(InnNet),
    Cdc(CdcNet),
    Reverse(ReverseNet),
}

/// Forward-pass state needed by [`Manifold::input_grad`].
#[derive(Clone, Debug)]
pub enum ManifoldTrace {
    Taylor(taylor::TaylorTrace),
    Inn(inn::InnTrace),
    Cdc(cdc::CdcTrace),
    Reverse,
}

impl Manifold {
    /// Draws weights for `cfg` from a generator seeded with `seed`.
    pub fn draw(cfg: &RandomNetConfig, image_channels: usize, seed: u64) -> Result<Self> {
        cfg.validate("net")?;
        let mut rng = SeededRng::new(seed);
        Ok(match cfg.kind {
            ManifoldKind::Taylor => Manifold::Taylor(TaylorNet::random(
                &mut rng,
                image_channels,
                cfg.channels,
                cfg.depth,
                cfg.kernel,
                cfg.order_n,
                cfg.init,
            )?),
            ManifoldKind::Inn => Manifold::Inn(InnNet::random(
                &mut rng,
                image_channels,
                cfg.channels,
                cfg.depth,
                cfg.kernel,
                cfg.init,
            )?),
            ManifoldKind::Cdc => Manifold::Cdc(CdcNet::random(
                &mut rng,
                image_channels,
                cfg.channels,
                cfg.depth,
                cfg.kernel,
                cfg.theta,
                cfg.init,
            )?),
            ManifoldKind::Reverse => {
                Manifold::Reverse(ReverseNet::random(&mut rng, cfg.sigmas.clone(), cfg.iterations_k)?)
            }
        })
    }

    pub fn kind(&self) -> ManifoldKind {
        match self {
            Manifold::Taylor(_) => ManifoldKind::Taylor,
            Manifold::Inn(_) => ManifoldKind::Inn,
            Manifold::Cdc(_) => ManifoldKind::Cdc,
            Manifold::Reverse(_) => ManifoldKind::Reverse,
        }
    }

    pub fn forward(&self, y: &Tensor) -> Result<Tensor> {
        match self {
            Manifold::Taylor(n) => n.forward(y),
            Manifold::Inn(n) => n.forward(y),
            Manifold::Cdc(n) => n.forward(y),
            Manifold::Reverse(n) => n.forward(y),
        }
    }

    pub fn forward_traced(&self, y: &Tensor) -> Result<(Tensor, ManifoldTrace)> {
        Ok(match self {
            Manifold::Taylor(n) => {
                let (o, t) = n.forward_traced(y)?;
                (o, ManifoldTrace::Taylor(t))
            }
            Manifold::Inn(n) => {
                let (o, t) = n.forward_traced(y)?;
                (o, ManifoldTrace::Inn(t))
            }
            Manifold::Cdc(n) => {
                let (o, t) = n.forward_traced(y)?;
                (o, ManifoldTrace::Cdc(t))
            }
            Manifold::Reverse(n) => (n.forward(y)?, ManifoldTrace::Reverse),
        })
    }

    /// Vector-Jacobian product with respect to the input image.
    pub fn input_grad(&self, trace: &ManifoldTrace, upstream: &Tensor) -> Result<Tensor> {
        match (self, trace) {
            (Manifold::Taylor(n), ManifoldTrace::Taylor(t)) => n.input_grad(t, upstream),
            (Manifold::Inn(n), ManifoldTrace::Inn(t)) => n.input_grad(t, upstream),
            (Manifold::Cdc(n), ManifoldTrace::Cdc(t)) => n.input_grad(t, upstream),
            (Manifold::Reverse(n), ManifoldTrace::Reverse) => n.input_grad(upstream),
            _ => Err(Error::invalid("Manifold::input_grad", "trace belongs to a different manifold kind")),
        }
    }

    /// Smallest distance of any ReLU input from zero in this forward pass.
    pub fn kink_margin(&self, trace: &ManifoldTrace) -> f64 {
        match (self, trace) {
            (Manifold::Taylor(n), ManifoldTrace::Taylor(t)) => n.kink_margin(t),
            (Manifold::Inn(n), ManifoldTrace::Inn(t)) => n.kink_margin(t),
            (Manifold::Cdc(n), ManifoldTrace::Cdc(t)) => n.kink_margin(t),
            _ => f64::INFINITY,
        }
    }
}

/// Evaluates the drawn network `net` for configuration `cfg`.
pub fn manifold_forward(cfg: &RandomNetConfig, net: &Manifold, y: &Tensor) -> Result<Tensor> {
    if cfg.kind != net.kind() {
        return Err(Error::invalid(
            "manifold_forward",
            format!("config is {:?} but weights are {:?}", cfg.kind, net.kind()),
        ));
    }
    net.forward(y)
}
