//! The architecture string notation and the built-in networks.
//!
//! A network is written as `-`-separated tokens:
//!
//! - `convBlock[N,w,s,p]` — convolution with `N` filters of size `w×w`,
//!   stride `s`, padding `p`, followed by ReLU and batch normalization
//! - `pool[k]` — `k×k` max pooling with stride `k`
//! - `fc[n]` — fully-connected layer with `n` outputs (flattens its input)
//! - `gap` — global average pooling to one value per channel
//! - `L2norm` — row-wise L2 normalization (the descriptor head)
//! - `stn` — a spatial transformer placed on the raw input
//!
//! [`CNN7`] is the 7-block descriptor network; [`CNN7STN`] prepends a
//! spatial transformer to it. `gap` bridges the final `128×5×5` feature map
//! of the conv stack to the 128-d descriptor.

use crate::error::{Error, Result};

/// One parsed token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    ConvBlock {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Pool {
        k: usize,
    },
    Fc {
        out: usize,
    },
    Gap,
    L2Norm,
    Stn,
}

/// Ordered token list; `parse` and `render` are mutually inverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    tokens: Vec<LayerSpec>,
}

/// The descriptor network: 7 stages of 3×3 conv blocks with max pooling,
/// global average pooling, and an L2-normalized 128-d output.
pub const CNN7: &str = "convBlock[32,3,1,1]-convBlock[64,3,1,1]-pool[2]-convBlock[64,3,1,1]-convBlock[64,3,1,1]-pool[2]-convBlock[128,3,1,1]-convBlock[128,3,1,1]-pool[3]-convBlock[128,3,1,1]-gap-L2norm";

/// [`CNN7`] with a spatial transformer on the preprocessed input.
pub const CNN7STN: &str = "stn-convBlock[32,3,1,1]-convBlock[64,3,1,1]-pool[2]-convBlock[64,3,1,1]-convBlock[64,3,1,1]-pool[2]-convBlock[128,3,1,1]-convBlock[128,3,1,1]-pool[3]-convBlock[128,3,1,1]-gap-L2norm";

/// Localisation sub-network of the spatial transformer, predicting the four
/// transform parameters.
pub const STN_LOCALISATION: &str =
    "convBlock[32,5,1,2]-pool[2]-convBlock[64,5,1,2]-pool[2]-convBlock[128,5,1,2]-fc[256]-fc[4]";

impl ArchSpec {
    pub fn new(tokens: Vec<LayerSpec>) -> Self {
        ArchSpec { tokens }
    }

    pub fn tokens(&self) -> &[LayerSpec] {
        &self.tokens
    }

    pub fn cnn7() -> Self {
        Self::parse(CNN7).expect("built-in cnn7 string parses")
    }

    pub fn cnn7stn() -> Self {
        Self::parse(CNN7STN).expect("built-in cnn7stn string parses")
    }

    /// Parses a token list, reporting the byte position of any failure.
    pub fn parse(s: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut pos = 0usize;
        for part in s.split('-') {
            if part.is_empty() {
                return Err(Error::Parse {
                    pos,
                    msg: "empty token".into(),
                });
            }
            tokens.push(parse_token(part, pos)?);
            pos += part.len() + 1;
        }
        Ok(ArchSpec { tokens })
    }

    /// Canonical string form; `parse(render(spec)) == spec`.
    pub fn render(&self) -> String {
        self.tokens
            .iter()
            .map(|t| match t {
                LayerSpec::ConvBlock {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => format!("convBlock[{filters},{kernel},{stride},{padding}]"),
                LayerSpec::Pool { k } => format!("pool[{k}]"),
                LayerSpec::Fc { out } => format!("fc[{out}]"),
                LayerSpec::Gap => "gap".into(),
                LayerSpec::L2Norm => "L2norm".into(),
                LayerSpec::Stn => "stn".into(),
            })
            .collect::<Vec<_>>()
            .join("-")
    }
}

fn parse_token(tok: &str, pos: usize) -> Result<LayerSpec> {
    let (name, args) = match tok.find('[') {
        Some(open) => {
            if !tok.ends_with(']') {
                return Err(Error::Parse {
                    pos,
                    msg: format!("token `{tok}` has an unterminated `[`"),
                });
            }
            let body = &tok[open + 1..tok.len() - 1];
            let args = body
                .split(',')
                .map(|a| {
                    a.parse::<usize>().map_err(|_| Error::Parse {
                        pos,
                        msg: format!("token `{tok}`: `{a}` is not a nonnegative integer"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (&tok[..open], args)
        }
        None => (tok, Vec::new()),
    };
    let arity_err = |want: &str| Error::Parse {
        pos,
        msg: format!("token `{tok}`: expected {want}"),
    };
    match name {
        "convBlock" => {
            if args.len() != 4 {
                return Err(arity_err("convBlock[N,w,s,p]"));
            }
            let (filters, kernel, stride, padding) = (args[0], args[1], args[2], args[3]);
            if filters == 0 || kernel == 0 || stride == 0 {
                return Err(Error::Parse {
                    pos,
                    msg: format!("token `{tok}`: N, w and s must be positive"),
                });
            }
            Ok(LayerSpec::ConvBlock {
                filters,
                kernel,
                stride,
                padding,
            })
        }
        "pool" => {
            if args.len() != 1 || args[0] == 0 {
                return Err(arity_err("pool[k] with k ≥ 1"));
            }
            Ok(LayerSpec::Pool { k: args[0] })
        }
        "fc" => {
            if args.len() != 1 || args[0] == 0 {
                return Err(arity_err("fc[n] with n ≥ 1"));
            }
            Ok(LayerSpec::Fc { out: args[0] })
        }
        "gap" if args.is_empty() => Ok(LayerSpec::Gap),
        "L2norm" if args.is_empty() => Ok(LayerSpec::L2Norm),
        "stn" if args.is_empty() => Ok(LayerSpec::Stn),
        "gap" | "L2norm" | "stn" => Err(arity_err("no arguments")),
        _ => Err(Error::Parse {
            pos,
            msg: format!("unknown token `{name}`"),
        }),
    }
}
