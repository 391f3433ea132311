//! Architecture registry.
//!
//! Two compact backbones train from scratch on a CPU. The large published
//! backbones are listed with their reported depth and size so reports can
//! name them, but building one requires pretrained weights that are not
//! shipped.

use super::layers::*;
use super::{Network, Sequential, STEM_SIDE};
use crate::error::TrainError;

pub const SMALL_CONV: &str = "small-conv";
pub const SMALL_ATTN: &str = "small-attn";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchInfo {
    pub name: &'static str,
    pub layer_count: u64,
    pub layer_unit: Option<&'static str>,
    pub weight_count: u64,
    /// Whether [`build`] can instantiate it without external weights.
    pub trainable: bool,
}

const BLOCKS: Option<&str> = Some("transformer blocks");

const PRETRAINED: [(&str, u64, Option<&str>, u64); 9] = [
    ("ConvNext-small", 50, None, 50_000_000),
    ("ConvNext-base", 50, None, 89_000_000),
    ("Swim-transformer base", 12, BLOCKS, 88_000_000),
    ("Twins-SVT-base", 12, BLOCKS, 56_000_000),
    ("Twins-SVT-large", 12, BLOCKS, 99_000_000),
    ("Twins-PCPVT-large", 12, BLOCKS, 76_000_000),
    ("ViT-S", 12, BLOCKS, 22_000_000),
    ("ViT-L", 24, BLOCKS, 307_000_000),
    ("AntiCounterfeit", 380, None, 133_000_000),
];

fn small_conv_body() -> Sequential {
    let s = STEM_SIDE;
    Sequential::new(vec![
        Box::new(Conv2d { c_in: 3, c_out: 6, h: s, w: s, k: 3 }),
        Box::new(Relu { len: 6 * s * s }),
        Box::new(MaxPool2 { c: 6, h: s, w: s }),
        Box::new(Conv2d { c_in: 6, c_out: 12, h: s / 2, w: s / 2, k: 3 }),
        Box::new(Relu { len: 12 * s * s / 4 }),
        Box::new(MaxPool2 { c: 12, h: s / 2, w: s / 2 }),
        Box::new(Conv2d { c_in: 12, c_out: 16, h: s / 4, w: s / 4, k: 3 }),
        Box::new(Relu { len: 16 * s * s / 16 }),
        Box::new(GlobalAvgPool { c: 16, plane: s * s / 16 }),
        Box::new(Dense { n_in: 16, n_out: 1 }),
    ])
}

fn small_attn_body() -> Sequential {
    let embed = PatchEmbed { c: 3, h: STEM_SIDE, w: STEM_SIDE, patch: 4, dim: 24 };
    let tokens = embed.tokens();
    Sequential::new(vec![
        Box::new(embed),
        Box::new(AttentionBlock { tokens, dim: 24, hidden: 48 }),
        Box::new(MeanTokens { tokens, dim: 24 }),
        Box::new(Dense { n_in: 24, n_out: 1 }),
    ])
}

fn trainable_body(name: &str) -> Option<Sequential> {
    match name {
        SMALL_CONV => Some(small_conv_body()),
        SMALL_ATTN => Some(small_attn_body()),
        _ => None,
    }
}

/// Every registered architecture.
pub fn registry() -> Vec<ArchInfo> {
    let mut out: Vec<ArchInfo> = [SMALL_CONV, SMALL_ATTN]
        .into_iter()
        .map(|name| {
            let body = trainable_body(name).expect("registered");
            ArchInfo {
                name,
                layer_count: body.depth(),
                layer_unit: None,
                weight_count: body.n_params() as u64,
                trainable: true,
            }
        })
        .collect();
    out.extend(PRETRAINED.iter().map(|&(name, layers, unit, weights)| ArchInfo {
        name,
        layer_count: layers,
        layer_unit: unit,
        weight_count: weights,
        trainable: false,
    }));
    out
}

pub fn lookup(name: &str) -> Option<ArchInfo> {
    registry().into_iter().find(|a| a.name == name)
}

/// A freshly initialized network for `name`.
pub fn build(name: &str, seed: u64) -> Result<Network, TrainError> {
    match trainable_body(name) {
        Some(body) => Ok(Network::new(name, body, seed)),
        None if lookup(name).is_some() => Err(TrainError::PretrainedUnavailable(name.into())),
        None => Err(TrainError::UnknownArchitecture(name.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_backbones_build_and_report_their_size() {
        for name in [SMALL_CONV, SMALL_ATTN] {
            let net = build(name, 1).unwrap();
            let info = lookup(name).unwrap();
            assert_eq!(net.weight_count(), info.weight_count);
            assert_eq!(net.layer_count(), info.layer_count);
            assert!(net.weight_count() > 0);
        }
        assert_eq!(build(SMALL_CONV, 1).unwrap().layer_count(), 4);
    }

    #[test]
    fn large_backbones_need_pretrained_weights() {
        assert!(matches!(
            build("ViT-L", 0),
            Err(TrainError::PretrainedUnavailable(_))
        ));
        assert!(matches!(build("nope", 0), Err(TrainError::UnknownArchitecture(_))));
        let ac = lookup("AntiCounterfeit").unwrap();
        assert_eq!((ac.layer_count, ac.weight_count), (380, 133_000_000));
    }

    #[test]
    fn initialization_is_seeded() {
        assert_eq!(build(SMALL_CONV, 4).unwrap().params, build(SMALL_CONV, 4).unwrap().params);
        assert_ne!(build(SMALL_CONV, 4).unwrap().params, build(SMALL_CONV, 5).unwrap().params);
    }
}
