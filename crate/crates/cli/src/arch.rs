//! Architecture strings.
//!
//! Two forms:
//!
//! - MLP: hyphen-separated widths, relu between layers, e.g.
//!   `3072-500-120-500-10`. The first width must match the dataset's feature
//!   count and the last the class count.
//! - Conv stack: bracketed items joined by `-` or whitespace, e.g.
//!   `[conv 8 5x5 s1 p2]-[relu]-[pool 2]-[fc 10]`. Items: `conv OUT KxK`
//!   with optional `sS` stride (default 1) and `pP` padding (default 0),
//!   `relu`, `tanh`, `pool W` with optional `sS` (default stride = window),
//!   and `fc N`. The stack must end with `fc`.

use crate::error::{CliError, Result};
use proxprop_core::network::{Block, ConvTransfer, LinearTransfer, Nonlin};
use proxprop_core::rng;
use proxprop_core::Network;

#[derive(Debug, Clone, PartialEq)]
enum Item {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Tanh,
    Pool {
        window: usize,
        stride: usize,
    },
    Fc(usize),
}

fn parse_items(arch: &str) -> Result<Vec<Item>> {
    let mut items = Vec::new();
    let mut rest = arch.trim();
    while !rest.is_empty() {
        let open = rest
            .find('[')
            .ok_or_else(|| CliError::Config(format!("expected '[' in '{rest}'")))?;
        let close = rest[open..]
            .find(']')
            .ok_or_else(|| CliError::Config(format!("unclosed '[' in '{rest}'")))?
            + open;
        let inner = &rest[open + 1..close];
        items.push(parse_item(inner)?);
        rest = rest[close + 1..].trim_start_matches(['-', ' ']).trim();
    }
    if items.is_empty() {
        return Err(CliError::Config("empty architecture".into()));
    }
    Ok(items)
}

fn parse_item(inner: &str) -> Result<Item> {
    let parts: Vec<&str> = inner.split_whitespace().collect();
    match parts.as_slice() {
        ["relu"] => Ok(Item::Relu),
        ["tanh"] => Ok(Item::Tanh),
        ["fc", n] => Ok(Item::Fc(parse_num(n)?)),
        ["pool", rest @ ..] if !rest.is_empty() => {
            let window = parse_num(rest[0])?;
            let mut stride = window;
            for opt in &rest[1..] {
                if let Some(s) = opt.strip_prefix('s') {
                    stride = parse_num(s)?;
                } else {
                    return Err(CliError::Config(format!("unknown pool option '{opt}'")));
                }
            }
            Ok(Item::Pool { window, stride })
        }
        ["conv", out, kspec, opts @ ..] => {
            let out_channels = parse_num(out)?;
            let (kh, kw) = kspec
                .split_once('x')
                .ok_or_else(|| CliError::Config(format!("kernel '{kspec}' is not KxK")))?;
            let kernel = parse_num(kh)?;
            if parse_num(kw)? != kernel {
                return Err(CliError::Config("only square kernels are supported".into()));
            }
            let mut stride = 1;
            let mut padding = 0;
            for opt in opts {
                if let Some(s) = opt.strip_prefix('s') {
                    stride = parse_num(s)?;
                } else if let Some(p) = opt.strip_prefix('p') {
                    padding = parse_num(p)?;
                } else {
                    return Err(CliError::Config(format!("unknown conv option '{opt}'")));
                }
            }
            Ok(Item::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            })
        }
        _ => Err(CliError::Config(format!("cannot parse layer '[{inner}]'"))),
    }
}

fn parse_num(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| CliError::Config(format!("'{s}' is not a positive integer")))
}

/// Builds a network for the architecture string, checking against the
/// dataset's feature count, class count, and (for conv stacks) image
/// geometry. Parameters are initialized from `seed`.
pub fn build_network(
    arch: &str,
    input_dim: usize,
    image_shape: Option<(usize, usize, usize)>,
    classes: usize,
    conv_bias: bool,
    seed: u64,
) -> Result<Network> {
    let mut r = rng::seeded(seed);
    if !arch.contains('[') {
        let dims: Result<Vec<usize>> = arch.split('-').map(parse_num).collect();
        let dims = dims?;
        if dims.len() < 2 {
            return Err(CliError::Config(format!(
                "mlp architecture '{arch}' needs at least two widths"
            )));
        }
        if dims[0] != input_dim {
            return Err(CliError::Config(format!(
                "architecture expects {} inputs, dataset provides {input_dim}",
                dims[0]
            )));
        }
        if *dims.last().unwrap() != classes {
            return Err(CliError::Config(format!(
                "architecture ends in {} outputs, dataset has {classes} classes",
                dims.last().unwrap()
            )));
        }
        return Ok(Network::mlp(&dims, Nonlin::Relu, &mut r)?);
    }

    let items = parse_items(arch)?;
    let mut blocks: Vec<Block> = Vec::new();
    let mut dim = input_dim;
    let mut shape = image_shape;
    let mut pending: Option<(LinearTransfer, Vec<Nonlin>)> = None;

    let flush = |pending: &mut Option<(LinearTransfer, Vec<Nonlin>)>,
                     blocks: &mut Vec<Block>,
                     r: &mut rng::ChaCha8Rng| {
        if let Some((transfer, sigma)) = pending.take() {
            let theta = transfer.init_theta(r);
            blocks.push(Block {
                transfer,
                theta,
                sigma,
            });
        }
    };

    for item in items {
        match item {
            Item::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let in_shape = shape.ok_or_else(|| {
                    CliError::Config(
                        "conv layer needs image-shaped input (dataset without geometry, or after fc)"
                            .into(),
                    )
                })?;
                flush(&mut pending, &mut blocks, &mut r);
                let conv = ConvTransfer {
                    in_shape,
                    out_channels,
                    kernel_h: kernel,
                    kernel_w: kernel,
                    stride,
                    padding,
                    bias: conv_bias,
                };
                let transfer = LinearTransfer::Conv2d(conv);
                shape = transfer.out_image_shape();
                dim = transfer.out_dim();
                pending = Some((transfer, Vec::new()));
            }
            Item::Fc(n) => {
                flush(&mut pending, &mut blocks, &mut r);
                pending = Some((LinearTransfer::dense(dim, n), Vec::new()));
                dim = n;
                shape = None;
            }
            Item::Relu | Item::Tanh => {
                let nl = if matches!(item, Item::Relu) {
                    Nonlin::Relu
                } else {
                    Nonlin::Tanh
                };
                match &mut pending {
                    Some((_, sigma)) => sigma.push(nl),
                    None => {
                        return Err(CliError::Config(
                            "activation before any parametric layer".into(),
                        ))
                    }
                }
            }
            Item::Pool { window, stride } => {
                let in_shape = shape.ok_or_else(|| {
                    CliError::Config("pool layer needs image-shaped input".into())
                })?;
                let nl = Nonlin::maxpool(in_shape, window, stride);
                shape = nl.out_image_shape(Some(in_shape));
                dim = nl.out_dim(dim)?;
                match &mut pending {
                    Some((_, sigma)) => sigma.push(nl),
                    None => {
                        return Err(CliError::Config(
                            "pool before any parametric layer".into(),
                        ))
                    }
                }
            }
        }
    }
    match &pending {
        Some((_, sigma)) if sigma.is_empty() => {}
        _ => {
            return Err(CliError::Config(
                "architecture must end with a plain fc logits layer".into(),
            ))
        }
    }
    flush(&mut pending, &mut blocks, &mut r);
    if dim != classes {
        return Err(CliError::Config(format!(
            "architecture ends in {dim} outputs, dataset has {classes} classes"
        )));
    }
    Ok(Network::new(blocks)?)
}
