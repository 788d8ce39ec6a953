mod common;

use common::conv_bn_params;
use detbench_core::blocks::{build_block, BlockKind, BlockSpec, ExpandConvention};
use detbench_core::tensor::{Activation, Shape, Tensor};

fn params(spec: &BlockSpec) -> u64 {
    build_block(spec).unwrap().cost(16, 16).unwrap().params
}

// One valid spec per kind, with the expected output shape for a 16x16 input.
fn catalogue() -> Vec<(BlockSpec, Shape)> {
    use BlockKind::*;
    let s = |c, hw| Shape::new(1, c, hw, hw);
    vec![
        (BlockSpec::new(ConvBnAct, 8, 16).stride(2), s(16, 8)),
        (BlockSpec::new(DarknetBottleneck, 16, 16).residual(true), s(16, 16)),
        (BlockSpec::new(CspLayer, 16, 32).depth(2), s(32, 16)),
        (BlockSpec::new(MbConv, 16, 24).stride(2).expand(4.0), s(24, 8)),
        (BlockSpec::new(FusedMbConv, 16, 16).residual(true), s(16, 16)),
        (BlockSpec::new(Sandglass, 16, 16).reduce(0.5).residual(true), s(16, 16)),
        (BlockSpec::new(RegNetX, 16, 32).stride(2).group_width(8), s(32, 8)),
        (BlockSpec::new(DsConv, 16, 32).kernel(5).se(true).act(Activation::HardSwish), s(32, 16)),
        (BlockSpec::new(BsConv, 16, 32).stride(2), s(32, 8)),
        (BlockSpec::new(Focus, 3, 12), s(12, 8)),
        (BlockSpec::new(SppBottleneck, 16, 16), s(16, 16)),
        (BlockSpec::new(SqueezeExcite, 16, 16), s(16, 16)),
    ]
}

#[test]
fn every_kind_forwards_to_its_inferred_shape() {
    for (spec, want) in catalogue() {
        let blk = build_block(&spec).unwrap();
        let input = Shape::new(1, spec.in_channels, 16, 16);
        assert_eq!(blk.output_shape(input).unwrap(), want, "{:?}", spec.kind);
        let y = blk.forward(&Tensor::seeded(input, 1)).unwrap();
        assert_eq!(y.shape(), want, "{:?}", spec.kind);
        assert!(y.data().iter().all(|v| v.is_finite()), "{:?}", spec.kind);
    }
}

#[test]
fn block_params_match_hand_counts() {
    use BlockKind::*;
    // expand 1x1, depthwise 3x3, linear project 1x1
    let mb = BlockSpec::new(MbConv, 16, 24).expand(4.0);
    let h = 24 * 4;
    assert_eq!(params(&mb), conv_bn_params(16, h, 1, 1) + conv_bn_params(h, h, 3, h) + conv_bn_params(h, 24, 1, 1));

    // 3x3 expand then 1x1 project
    let fused = BlockSpec::new(FusedMbConv, 16, 16).expand(2.0);
    assert_eq!(params(&fused), conv_bn_params(16, 32, 3, 1) + conv_bn_params(32, 16, 1, 1));

    let sg = BlockSpec::new(Sandglass, 32, 32).reduce(0.25);
    assert_eq!(
        params(&sg),
        conv_bn_params(32, 32, 3, 32) + conv_bn_params(32, 8, 1, 1) + conv_bn_params(8, 32, 1, 1) + conv_bn_params(32, 32, 3, 32)
    );

    let ds = BlockSpec::new(DsConv, 16, 32);
    assert_eq!(params(&ds), conv_bn_params(16, 16, 3, 16) + conv_bn_params(16, 32, 1, 1));
    let bs = BlockSpec::new(BsConv, 16, 32);
    assert_eq!(params(&bs), conv_bn_params(16, 32, 1, 1) + conv_bn_params(32, 32, 3, 32));

    // hidden = out / 2 on both CSP branches, one bottleneck, 1x1 merge
    let csp = BlockSpec::new(CspLayer, 32, 32).depth(1);
    let bottleneck = conv_bn_params(16, 16, 1, 1) + conv_bn_params(16, 16, 3, 1);
    assert_eq!(params(&csp), 2 * conv_bn_params(32, 16, 1, 1) + bottleneck + conv_bn_params(32, 32, 1, 1));

    let focus = BlockSpec::new(Focus, 3, 12);
    assert_eq!(params(&focus), conv_bn_params(12, 12, 3, 1));

    let spp = BlockSpec::new(SppBottleneck, 32, 32);
    assert_eq!(params(&spp), conv_bn_params(32, 16, 1, 1) + conv_bn_params(64, 32, 1, 1));

    // projection shortcut appears when shape changes
    let rx = BlockSpec::new(RegNetX, 16, 32).stride(2).group_width(8);
    assert_eq!(
        params(&rx),
        conv_bn_params(16, 32, 1, 1) + conv_bn_params(32, 32, 3, 4) + conv_bn_params(32, 32, 1, 1) + conv_bn_params(16, 32, 1, 1)
    );
}

#[test]
fn residual_blocks_are_identity_plus_branch() {
    // with the residual off, the branch alone; on, the input is added back
    let spec = BlockSpec::new(BlockKind::MbConv, 8, 8);
    let x = Tensor::seeded(Shape::new(1, 8, 6, 6), 4);
    let plain = detbench_core::blocks::build_block_seeded(&spec, 9).unwrap().forward(&x).unwrap();
    let res = detbench_core::blocks::build_block_seeded(&spec.clone().residual(true), 9).unwrap().forward(&x).unwrap();
    for ((p, r), xi) in plain.data().iter().zip(res.data()).zip(x.data()) {
        assert!((p + xi - r).abs() < 1e-5);
    }
}

#[test]
fn mobilenet_convention_drops_unit_expand() {
    let base = BlockSpec::new(BlockKind::MbConv, 32, 32).expand(1.0);
    let mn = base.clone().convention(ExpandConvention::MobileNet);
    assert_eq!(params(&base) - params(&mn), conv_bn_params(32, 32, 1, 1));
}

#[test]
fn invalid_specs_are_spec_errors() {
    use BlockKind::*;
    let bad = [
        BlockSpec::new(ConvBnAct, 0, 8),
        BlockSpec::new(ConvBnAct, 8, 8).stride(3),
        BlockSpec::new(ConvBnAct, 8, 8).kernel(4),
        BlockSpec::new(MbConv, 8, 8).expand(0.0),
        BlockSpec::new(MbConv, 8, 16).residual(true),
        BlockSpec::new(DsConv, 8, 8).stride(2).residual(true),
        BlockSpec::new(CspLayer, 8, 8).stride(2),
        BlockSpec::new(CspLayer, 8, 8).depth(0),
        BlockSpec::new(SppBottleneck, 8, 8).stride(2),
        BlockSpec::new(SqueezeExcite, 8, 16),
        BlockSpec::new(RegNetX, 8, 8).group_width(0),
        BlockSpec::new(RegNetX, 8, 8).group_width(3),
    ];
    for spec in bad {
        let e = build_block(&spec).expect_err(&format!("{spec:?} should be rejected"));
        assert!(e.is_spec_error(), "{spec:?}: {e}");
    }
}

#[test]
fn odd_input_rejected_by_focus() {
    let blk = build_block(&BlockSpec::new(BlockKind::Focus, 3, 12)).unwrap();
    assert!(blk.output_shape(Shape::new(1, 3, 7, 8)).is_err());
    assert!(blk.forward(&Tensor::zeros(Shape::new(1, 4, 8, 8))).is_err());
}
