use rfl_tensor::{ConvGeometry, NormMode, Var};

use super::config::{BackboneKind, ModelConfig, BACKBONE_STAGES};
use crate::error::Result;
use crate::layers::{Builder, Conv2d, Ctx, Norm};

/// Conv, batch norm, optional ReLU.
#[derive(Debug, Clone)]
struct ConvNorm {
    conv: Conv2d,
    norm: Norm,
}

impl ConvNorm {
    fn new(
        b: &mut Builder<'_>,
        inputs: usize,
        outputs: usize,
        kernel: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(
                &mut b.scope("conv"),
                inputs,
                outputs,
                kernel,
                ConvGeometry::new((1, 1), padding),
                false,
            )?,
            norm: Norm::new(&mut b.scope("norm"), outputs, NormMode::Batch)?,
        })
    }

    fn forward(&self, ctx: &mut Ctx<'_>, x: Var, relu: bool) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.norm.forward(ctx, y)?;
        Ok(if relu { ctx.tape.relu(y)? } else { y })
    }
}

#[derive(Debug, Clone)]
enum Block {
    Plain(ConvNorm),
    Residual {
        first: ConvNorm,
        second: ConvNorm,
        skip: Conv2d,
    },
}

impl Block {
    fn new(b: &mut Builder<'_>, kind: BackboneKind, inputs: usize, outputs: usize) -> Result<Self> {
        Ok(match kind {
            BackboneKind::Vgg => Block::Plain(ConvNorm::new(
                &mut b.scope("conv1"),
                inputs,
                outputs,
                (3, 3),
                (1, 1),
            )?),
            BackboneKind::Resnet => Block::Residual {
                first: ConvNorm::new(&mut b.scope("conv1"), inputs, outputs, (3, 3), (1, 1))?,
                second: ConvNorm::new(&mut b.scope("conv2"), outputs, outputs, (1, 1), (0, 0))?,
                skip: Conv2d::new(
                    &mut b.scope("skip"),
                    inputs,
                    outputs,
                    (1, 1),
                    ConvGeometry::default(),
                    false,
                )?,
            },
        })
    }

    fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        match self {
            Block::Plain(c) => c.forward(ctx, x, true),
            Block::Residual {
                first,
                second,
                skip,
            } => {
                let y = first.forward(ctx, x, true)?;
                let y = second.forward(ctx, y, false)?;
                let s = skip.forward(ctx, x)?;
                let y = ctx.tape.add(y, s)?;
                Ok(ctx.tape.relu(y)?)
            }
        }
    }
}

type Pool = ((usize, usize), (usize, usize));

/// One backbone stage: optional pooling around a conv block.
#[derive(Debug, Clone)]
pub struct Stage {
    index: usize,
    before: Option<Pool>,
    block: Block,
    after: Option<Pool>,
}

impl Stage {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut y = x;
        if let Some((k, s)) = self.before {
            y = ctx.tape.maxpool2d(y, k, s)?;
        }
        y = self.block.forward(ctx, y)?;
        if let Some((k, s)) = self.after {
            y = ctx.tape.maxpool2d(y, k, s)?;
        }
        Ok(y)
    }
}

/// Channel widths after each stage.
pub fn stage_widths(channels: usize) -> [usize; BACKBONE_STAGES] {
    [channels / 8, channels / 4, channels / 2, channels]
}

/// Builds stages `range` of the four-stage backbone under `b`, each in its own
/// `s{n}` scope.
///
/// For a `h×w` grayscale input the stages produce `h/2×w/2`, `h/4×w/4`,
/// `h/8×w/4` and finally `1×(w/4 + 1)`.
pub fn build_stages(
    b: &mut Builder<'_>,
    cfg: &ModelConfig,
    range: std::ops::Range<usize>,
) -> Result<Vec<Stage>> {
    let widths = stage_widths(cfg.channels);
    let half = ((2, 2), (2, 2));
    let tall = ((2, 1), (2, 1));
    range
        .map(|i| {
            let mut s = b.scope(&format!("s{}", i + 1));
            let stage = match i {
                0 => Stage {
                    index: 0,
                    before: None,
                    block: Block::Plain(ConvNorm::new(
                        &mut s.scope("conv1"),
                        1,
                        widths[0],
                        (3, 3),
                        (1, 1),
                    )?),
                    after: Some(half),
                },
                1 => Stage {
                    index: 1,
                    before: Some(half),
                    block: Block::new(&mut s, cfg.backbone, widths[0], widths[1])?,
                    after: None,
                },
                2 => Stage {
                    index: 2,
                    before: Some(tall),
                    block: Block::new(&mut s, cfg.backbone, widths[1], widths[2])?,
                    after: None,
                },
                _ => Stage {
                    index: 3,
                    before: None,
                    block: Block::Plain(ConvNorm::new(
                        &mut s.scope("conv1"),
                        widths[2],
                        widths[3],
                        (cfg.height / 8, 2),
                        (0, 1),
                    )?),
                    after: None,
                },
            };
            Ok(stage)
        })
        .collect()
}

pub fn run_stages(ctx: &mut Ctx<'_>, stages: &[Stage], x: Var) -> Result<Var> {
    stages.iter().try_fold(x, |y, s| s.forward(ctx, y))
}
