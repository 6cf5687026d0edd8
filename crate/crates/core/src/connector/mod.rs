//! The multimodal connector: visual tokens `N_v × D_v` to language-model
//! embeddings `N_v × D_llm`.
//!
//! Three variants:
//!
//! * `Mlp`: `V_out = MLP(V_img)`
//! * `MscBasic`: `V_out = MLP(MVSS(V_img))`
//! * `MscAdvanced`: `V_out = MLP(SwiGLU(MVSS(V_img)))`
//!
//! MVSS runs one shared Mamba-2 block along every scan direction of the
//! patch lattice, restores lattice order and averages the directions.

mod ffn;
mod scan;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use ffn::{
    gelu, gelu_grad, mlp_backward, mlp_project, swiglu, swiglu_backward, MlpGrads, MlpWeights, SwigluGrads,
    SwigluWeights,
};
pub use scan::{apply_scan, inverse_scan, scan_orders_bsm, scan_orders_csm, ScanOrder};

use crate::error::{Error, Result};
use crate::mamba2::{mamba2_block, Mamba2BlockWeights, Mamba2Config};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScanMechanism {
    /// Forward and backward over the row-major sequence.
    Bsm,
    /// Row-major and column-major, each forward and backward.
    Csm,
}

impl ScanMechanism {
    pub fn orders(self, rows: usize, cols: usize) -> Vec<ScanOrder> {
        match self {
            ScanMechanism::Bsm => scan_orders_bsm(rows, cols),
            ScanMechanism::Csm => scan_orders_csm(rows, cols),
        }
    }
}

impl fmt::Display for ScanMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScanMechanism::Bsm => "bsm",
            ScanMechanism::Csm => "csm",
        })
    }
}

impl FromStr for ScanMechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bsm" => Ok(ScanMechanism::Bsm),
            "csm" => Ok(ScanMechanism::Csm),
            _ => Err(Error::domain(format!(
                "unknown scan mechanism {s:?} (expected bsm or csm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConnectorKind {
    Mlp,
    MscBasic,
    MscAdvanced,
}

impl fmt::Display for ConnectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConnectorKind::Mlp => "mlp",
            ConnectorKind::MscBasic => "basic",
            ConnectorKind::MscAdvanced => "advanced",
        })
    }
}

impl FromStr for ConnectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(ConnectorKind::Mlp),
            "basic" | "msc-mlp-basic" => Ok(ConnectorKind::MscBasic),
            "advanced" | "msc-mlp-advanced" => Ok(ConnectorKind::MscAdvanced),
            _ => Err(Error::domain(format!(
                "unknown connector variant {s:?} (expected mlp, basic or advanced)"
            ))),
        }
    }
}

/// The scan mechanism is ignored for `Mlp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConnectorVariant {
    pub kind: ConnectorKind,
    pub scan: ScanMechanism,
}

impl fmt::Display for ConnectorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ConnectorKind::Mlp => write!(f, "mlp"),
            kind => write!(f, "msc-mlp-{kind}/{}", self.scan),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectorDims {
    pub d_v: usize,
    pub d_m: usize,
    pub d_ff: usize,
    pub d_llm: usize,
    pub d_state: usize,
    pub n_heads: usize,
}

impl ConnectorDims {
    /// `D_m = D_llm`, `D_ff = 2·D_v`.
    pub fn new(d_v: usize, d_llm: usize, d_state: usize, n_heads: usize) -> Self {
        ConnectorDims {
            d_v,
            d_m: d_llm,
            d_ff: 2 * d_v,
            d_llm,
            d_state,
            n_heads,
        }
    }

    pub fn mamba(&self) -> Result<Mamba2Config> {
        Mamba2Config::new(self.d_v, self.d_state, self.n_heads)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectorWeights<T> {
    pub mvss: Mamba2BlockWeights<T>,
    pub swiglu: SwigluWeights<T>,
    pub mlp: MlpWeights<T>,
}

impl<T: Element> ConnectorWeights<T> {
    pub fn random<R: Rng>(dims: ConnectorDims, rng: &mut R) -> Result<Self> {
        Ok(ConnectorWeights {
            mvss: Mamba2BlockWeights::random(dims.mamba()?, rng)?,
            swiglu: SwigluWeights::random(dims.d_v, dims.d_ff, rng)?,
            mlp: MlpWeights::random(dims.d_v, dims.d_m, dims.d_llm, rng)?,
        })
    }

    pub fn dims(&self) -> ConnectorDims {
        ConnectorDims {
            d_v: self.mvss.cfg.d_model,
            d_m: self.mlp.w2.rows(),
            d_ff: self.swiglu.w_gate.cols(),
            d_llm: self.mlp.d_out(),
            d_state: self.mvss.cfg.d_state,
            n_heads: self.mvss.cfg.n_heads,
        }
    }

    pub fn check(&self) -> Result<()> {
        self.mvss.check()?;
        self.swiglu.check()?;
        self.mlp.check()?;
        let d_v = self.mvss.cfg.d_model;
        if self.swiglu.w_gate.rows() != d_v || self.mlp.d_in() != d_v {
            return Err(Error::shape(
                "ConnectorWeights",
                &[d_v],
                &[self.swiglu.w_gate.rows(), self.mlp.d_in()],
            ));
        }
        Ok(())
    }

    pub fn to_named(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = self.mvss.to_named("mvss.");
        out.extend(self.swiglu.to_named("swiglu."));
        out.extend(self.mlp.to_named("mlp."));
        out
    }

    /// `d_state` and `n_heads` are not recoverable from array shapes alone.
    pub fn from_named(named: &BTreeMap<String, Tensor<T>>, d_state: usize, n_heads: usize) -> Result<Self> {
        let in_proj = named
            .get("mvss.in_proj")
            .ok_or_else(|| Error::Bundle("missing array mvss.in_proj".into()))?;
        let cfg = Mamba2Config::new(in_proj.rows(), d_state, n_heads)?;
        let w = ConnectorWeights {
            mvss: Mamba2BlockWeights::from_named(cfg, "mvss.", named)?,
            swiglu: SwigluWeights::from_named("swiglu.", named)?,
            mlp: MlpWeights::from_named("mlp.", named)?,
        };
        w.check()?;
        Ok(w)
    }
}

/// Runs the shared block along every scan direction and averages the
/// results in lattice order. Directions are merged in a fixed order.
pub fn mvss_forward<T: Element>(
    tokens: &Tensor<T>,
    rows: usize,
    cols: usize,
    scan: ScanMechanism,
    w: &Mamba2BlockWeights<T>,
) -> Result<Tensor<T>> {
    let (n, _) = tokens.dims2()?;
    if n != rows * cols || n == 0 {
        return Err(Error::shape("mvss_forward", tokens.shape(), &[rows, cols]));
    }
    let orders = scan.orders(rows, cols);
    let mut sum: Option<Tensor<T>> = None;
    for order in &orders {
        let seq = apply_scan(tokens, order)?;
        let out = inverse_scan(&mamba2_block(&seq, w)?, order)?;
        sum = Some(match sum {
            None => out,
            Some(acc) => acc.add(&out)?,
        });
    }
    let count = T::from_f64(orders.len() as f64);
    sum.expect("at least one direction").map(|v| v / count)
}

pub fn connector_forward<T: Element>(
    v_img: &Tensor<T>,
    rows: usize,
    cols: usize,
    variant: ConnectorVariant,
    w: &ConnectorWeights<T>,
) -> Result<Tensor<T>> {
    let run = || -> Result<Tensor<T>> {
        w.check()?;
        match variant.kind {
            ConnectorKind::Mlp => mlp_project(v_img, &w.mlp),
            ConnectorKind::MscBasic => {
                let scanned = mvss_forward(v_img, rows, cols, variant.scan, &w.mvss)?;
                mlp_project(&scanned, &w.mlp)
            }
            ConnectorKind::MscAdvanced => {
                let scanned = mvss_forward(v_img, rows, cols, variant.scan, &w.mvss)?;
                mlp_project(&swiglu(&scanned, &w.swiglu)?, &w.mlp)
            }
        }
    };
    run().map_err(|e| Error::Connector {
        variant: variant.to_string(),
        source: Box::new(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn weights(seed: u64) -> ConnectorWeights<f64> {
        ConnectorWeights::random(ConnectorDims::new(8, 12, 4, 2), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn tokens(n: usize, d: usize) -> Tensor<f64> {
        Tensor::from_fn(n, d, |i, j| ((i * d + j) as f64 * 0.31).cos()).unwrap()
    }

    #[test]
    fn single_token_grid_is_one_block_call() {
        let w = weights(1);
        let x = tokens(1, 8);
        for scan in [ScanMechanism::Bsm, ScanMechanism::Csm] {
            let y = mvss_forward(&x, 1, 1, scan, &w.mvss).unwrap();
            assert!(y.max_abs_diff(&mamba2_block(&x, &w.mvss).unwrap()).unwrap() < 1e-15);
        }
    }

    #[test]
    fn zero_block_is_identity() {
        let zero = Mamba2BlockWeights::zeros(Mamba2Config::new(8, 4, 2).unwrap()).unwrap();
        let x = tokens(12, 8);
        for scan in [ScanMechanism::Bsm, ScanMechanism::Csm] {
            assert_eq!(mvss_forward(&x, 3, 4, scan, &zero).unwrap(), x);
        }
    }

    #[test]
    fn variant_parsing_and_display() {
        assert_eq!("advanced".parse::<ConnectorKind>().unwrap(), ConnectorKind::MscAdvanced);
        assert_eq!("CSM".parse::<ScanMechanism>().unwrap(), ScanMechanism::Csm);
        assert!("diag".parse::<ScanMechanism>().is_err());
        let v = ConnectorVariant {
            kind: ConnectorKind::MscBasic,
            scan: ScanMechanism::Bsm,
        };
        assert_eq!(v.to_string(), "msc-mlp-basic/bsm");
    }

    #[test]
    fn errors_carry_variant_context() {
        let v = ConnectorVariant {
            kind: ConnectorKind::MscAdvanced,
            scan: ScanMechanism::Csm,
        };
        let err = connector_forward(&tokens(6, 8), 2, 2, v, &weights(0)).unwrap_err();
        assert!(err.to_string().starts_with("msc-mlp-advanced/csm connector:"), "{err}");
    }

    #[test]
    fn named_round_trip() {
        let w = weights(4);
        let named: BTreeMap<_, _> = w.to_named().into_iter().collect();
        assert_eq!(ConnectorWeights::from_named(&named, 4, 2).unwrap(), w);
    }
}
