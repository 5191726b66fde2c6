//! The three sequence classifiers, assembled from the layer ops.
//!
//! Each model maps one lesion, presented as a sequence of cubes or feature
//! vectors, to a single logit. Forward stores the activation trace inside
//! the model; backward consumes it and accumulates parameter gradients.

use super::gru::GruStack;
use super::ops;
use super::{init_uniform, NnError, Param};
use crate::rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Dense 3D block in row-major order.
#[derive(Debug, Clone)]
pub struct Array3 {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Array3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self, NnError> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "block {}x{}x{} needs {} values, got {}",
                dims[0],
                dims[1],
                dims[2],
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Array3 { dims, data })
    }
}

/// One lesion as the models see it.
#[derive(Debug, Clone)]
pub enum ModelInput {
    /// Sequence of single-channel cubes (slices x height x width).
    Cubes(Vec<Array3>),
    /// Sequence of plain feature vectors.
    Sequence(Vec<Vec<f64>>),
}

impl ModelInput {
    pub fn seq_len(&self) -> usize {
        match self {
            ModelInput::Cubes(c) => c.len(),
            ModelInput::Sequence(s) => s.len(),
        }
    }
}

/// Sizing of every network path; structure (block counts, layer counts) is
/// fixed, widths are configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    /// Channels of the 2D convolution blocks on polar slices.
    pub conv2d_channels: Vec<usize>,
    /// Fractional max-pool ratio after each 2D block, in (1, 2].
    pub pool_ratio: f64,
    /// Per-slice feature width after the 2D path.
    pub slice_feature: usize,
    /// Cube feature width after slice fusion.
    pub fuse_feature: usize,
    /// Channels of the 3D convolution blocks on Cartesian cubes.
    pub conv3d_channels: Vec<usize>,
    /// Number of leading 3D blocks followed by 2x max pooling.
    pub pool3d_count: usize,
    /// Cube feature width after the 3D path.
    pub cube_feature: usize,
    /// Output widths of the three dense layers applied to each sequence
    /// element in the feature-sequence model.
    pub mlp_widths: Vec<usize>,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub bidirectional: bool,
    /// Stream for parameter init and pooling-interval draws.
    pub seed: u64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            conv2d_channels: vec![4, 8],
            pool_ratio: std::f64::consts::SQRT_2,
            slice_feature: 16,
            fuse_feature: 16,
            conv3d_channels: vec![4, 8, 16],
            pool3d_count: 2,
            cube_feature: 32,
            mlp_widths: vec![24, 24, 16],
            gru_hidden: 16,
            gru_layers: 2,
            bidirectional: true,
            seed: 0,
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::BadConfig(m));
        if !(self.pool_ratio > 1.0 && self.pool_ratio <= 2.0) {
            return bad(format!("pool_ratio {} outside (1, 2]", self.pool_ratio));
        }
        if self.conv2d_channels.is_empty() || self.conv3d_channels.is_empty() {
            return bad("convolution paths need at least one block".into());
        }
        if self.conv2d_channels.iter().any(|&c| c == 0)
            || self.conv3d_channels.iter().any(|&c| c == 0)
        {
            return bad("zero-channel convolution block".into());
        }
        if self.pool3d_count > self.conv3d_channels.len() {
            return bad("more 3D pools than blocks".into());
        }
        if self.mlp_widths.len() != 3 || self.mlp_widths.iter().any(|&w| w == 0) {
            return bad("feature path needs exactly three dense widths".into());
        }
        if self.slice_feature == 0
            || self.fuse_feature == 0
            || self.cube_feature == 0
            || self.gru_hidden == 0
        {
            return bad("feature widths must be positive".into());
        }
        if self.gru_layers == 0 {
            return bad("at least one recurrent layer required".into());
        }
        Ok(())
    }
}

/// Fully connected layer owning its parameters.
#[derive(Debug, Clone)]
struct Dense {
    w: Param,
    b: Param,
    n_out: usize,
}

impl Dense {
    fn new(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            w: Param::new(init_uniform(n_out * n_in, n_in, rng)),
            b: Param::zeros(n_out),
            n_out,
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        ops::dense_forward(x, &self.w.w, &self.b.w, self.n_out)
    }

    fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let (dx, dw, db) = ops::dense_backward(x, &self.w.w, self.n_out, dy);
        for (a, v) in self.w.g.iter_mut().zip(&dw) {
            *a += v;
        }
        for (a, v) in self.b.g.iter_mut().zip(&db) {
            *a += v;
        }
        dx
    }
}

#[derive(Debug, Clone)]
struct Conv2d {
    w: Param,
    b: Param,
    ci: usize,
    co: usize,
}

impl Conv2d {
    fn new(ci: usize, co: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv2d {
            w: Param::new(init_uniform(co * ci * 9, ci * 9, rng)),
            b: Param::zeros(co),
            ci,
            co,
        }
    }

    fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        ops::conv2d_forward(x, self.ci, h, w, &self.w.w, &self.b.w, self.co)
    }

    fn backward(&mut self, x: &[f64], h: usize, w: usize, dy: &[f64]) -> Vec<f64> {
        let (dx, dw, db) = ops::conv2d_backward(x, self.ci, h, w, &self.w.w, self.co, dy);
        for (a, v) in self.w.g.iter_mut().zip(&dw) {
            *a += v;
        }
        for (a, v) in self.b.g.iter_mut().zip(&db) {
            *a += v;
        }
        dx
    }
}

#[derive(Debug, Clone)]
struct Conv3d {
    w: Param,
    b: Param,
    ci: usize,
    co: usize,
}

impl Conv3d {
    fn new(ci: usize, co: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv3d {
            w: Param::new(init_uniform(co * ci * 27, ci * 27, rng)),
            b: Param::zeros(co),
            ci,
            co,
        }
    }

    fn forward(&self, x: &[f64], d: usize, h: usize, w: usize) -> Vec<f64> {
        ops::conv3d_forward(x, self.ci, d, h, w, &self.w.w, &self.b.w, self.co)
    }

    fn backward(&mut self, x: &[f64], d: usize, h: usize, w: usize, dy: &[f64]) -> Vec<f64> {
        let (dx, dw, db) = ops::conv3d_backward(x, self.ci, d, h, w, &self.w.w, self.co, dy);
        for (a, v) in self.w.g.iter_mut().zip(&dw) {
            *a += v;
        }
        for (a, v) in self.b.g.iter_mut().zip(&db) {
            *a += v;
        }
        dx
    }
}

/// Common face of the three classifiers: logit out, gradient in.
pub trait SequenceModel {
    /// Maps one lesion to a logit. `draw` seeds any stochastic pooling for
    /// this pass; evaluation passes use a fixed draw so scoring is
    /// deterministic. Stores the activation trace for `backward`.
    fn forward(&mut self, input: &ModelInput, draw: u64) -> Result<f64, NnError>;

    /// Accumulates parameter gradients for the most recent forward pass.
    fn backward(&mut self, dlogit: f64);

    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn param_names(&self) -> Vec<String>;

    fn kind(&self) -> &'static str;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

struct PolarSliceTrace {
    block_in: Vec<Vec<f64>>,
    block_pre: Vec<Vec<f64>>,
    block_post: Vec<Vec<f64>>,
    block_arg: Vec<Vec<usize>>,
    flat: Vec<f64>,
    feat_pre: Vec<f64>,
}

struct PolarCubeTrace {
    slices: Vec<PolarSliceTrace>,
    fuse_in: Vec<f64>,
    fuse_pre: Vec<f64>,
}

struct PolarTrace {
    cubes: Vec<PolarCubeTrace>,
    gru_cache: super::gru::GruStackCache,
    summary: Vec<f64>,
    spatial: Vec<(usize, usize)>,
}

/// Polar-slice recurrent CNN: shared 2D convolution blocks with fractional
/// max pooling per slice, a dense slice feature, order-invariant slice
/// fusion per cube, and a recurrent stack over the cube sequence.
pub struct PolarRcnn {
    pub cfg: ArchitectureConfig,
    pub in_shape: [usize; 3],
    convs: Vec<Conv2d>,
    slice_dense: Dense,
    fuse_w: Param,
    fuse_b: Param,
    gru: GruStack,
    head: Dense,
    trace: Option<PolarTrace>,
}

/// Spatial extents after each pooled 2D block.
fn polar_spatial_chain(a: usize, r: usize, n_blocks: usize, ratio: f64) -> Result<Vec<(usize, usize)>, NnError> {
    let mut dims = Vec::with_capacity(n_blocks + 1);
    let (mut h, mut w) = (a, r);
    dims.push((h, w));
    for _ in 0..n_blocks {
        h = ops::fmp_out(h, ratio);
        w = ops::fmp_out(w, ratio);
        if h == 0 || w == 0 {
            return Err(NnError::BadConfig(format!(
                "pooling exhausts a {a}x{r} slice before {n_blocks} blocks"
            )));
        }
        dims.push((h, w));
    }
    Ok(dims)
}

impl PolarRcnn {
    /// `in_shape` is `[slices, angles, radii]` per cube.
    pub fn new(cfg: &ArchitectureConfig, in_shape: [usize; 3]) -> Result<Self, NnError> {
        cfg.validate()?;
        if in_shape.iter().any(|&d| d == 0) {
            return Err(NnError::BadConfig("empty cube shape".into()));
        }
        let chain = polar_spatial_chain(
            in_shape[1],
            in_shape[2],
            cfg.conv2d_channels.len(),
            cfg.pool_ratio,
        )?;
        let mut r = rng::stream(cfg.seed, "init_rcnn2d", &[0]);
        let mut convs = Vec::new();
        let mut ci = 1;
        for &co in &cfg.conv2d_channels {
            convs.push(Conv2d::new(ci, co, &mut r));
            ci = co;
        }
        let (fh, fw) = *chain.last().expect("chain nonempty");
        let flat = ci * fh * fw;
        let slice_dense = Dense::new(flat, cfg.slice_feature, &mut r);
        let fuse_w = Param::new(init_uniform(
            cfg.fuse_feature * cfg.slice_feature,
            cfg.slice_feature,
            &mut r,
        ));
        let fuse_b = Param::zeros(cfg.fuse_feature);
        let gru = GruStack::new(cfg.fuse_feature, cfg.gru_hidden, cfg.gru_layers, cfg.bidirectional, &mut r);
        let head = Dense::new(gru.summary_width(), 1, &mut r);
        Ok(PolarRcnn {
            cfg: cfg.clone(),
            in_shape,
            convs,
            slice_dense,
            fuse_w,
            fuse_b,
            gru,
            head,
            trace: None,
        })
    }
}

impl SequenceModel for PolarRcnn {
    fn forward(&mut self, input: &ModelInput, draw: u64) -> Result<f64, NnError> {
        let cubes = match input {
            ModelInput::Cubes(c) if !c.is_empty() => c,
            ModelInput::Cubes(_) => {
                return Err(NnError::ShapeMismatch("empty cube sequence".into()))
            }
            ModelInput::Sequence(_) => {
                return Err(NnError::ShapeMismatch("cube input required".into()))
            }
        };
        let [l, a, rr] = self.in_shape;
        for c in cubes.iter() {
            if c.dims != self.in_shape {
                return Err(NnError::ShapeMismatch(format!(
                    "cube {}x{}x{}, expected {l}x{a}x{rr}",
                    c.dims[0], c.dims[1], c.dims[2]
                )));
            }
        }
        let n_blocks = self.convs.len();
        // Pooling intervals are drawn once per block per pass and shared by
        // every slice, so evaluation with a fixed draw is deterministic.
        let mut row_lens = Vec::with_capacity(n_blocks);
        let mut col_lens = Vec::with_capacity(n_blocks);
        let mut spatial = Vec::with_capacity(n_blocks);
        let (mut h, mut w) = (a, rr);
        for b in 0..n_blocks {
            let mut ivr = rng::stream(self.cfg.seed, "fmp_intervals", &[draw, b as u64]);
            let rl = ops::fmp_intervals(h, self.cfg.pool_ratio, &mut ivr);
            let cl = ops::fmp_intervals(w, self.cfg.pool_ratio, &mut ivr);
            spatial.push((h, w));
            h = rl.len();
            w = cl.len();
            row_lens.push(rl);
            col_lens.push(cl);
        }
        let fdim = self.cfg.slice_feature;
        let mut seq = Vec::with_capacity(cubes.len());
        let mut cube_traces = Vec::with_capacity(cubes.len());
        for cube in cubes {
            let mut fuse_in = vec![0.0; l * fdim];
            let mut slices = Vec::with_capacity(l);
            for s in 0..l {
                let x0 = cube.data[s * a * rr..(s + 1) * a * rr].to_vec();
                let mut cur = x0;
                let mut block_in = Vec::with_capacity(n_blocks);
                let mut block_pre = Vec::with_capacity(n_blocks);
                let mut block_post = Vec::with_capacity(n_blocks);
                let mut block_arg = Vec::with_capacity(n_blocks);
                for (b, conv) in self.convs.iter().enumerate() {
                    let (bh, bw) = spatial[b];
                    let pre = conv.forward(&cur, bh, bw);
                    let post = ops::relu_forward(&pre);
                    let (pooled, arg) =
                        ops::fmp_forward(&post, conv.co, bh, bw, &row_lens[b], &col_lens[b]);
                    block_in.push(cur);
                    block_pre.push(pre);
                    block_post.push(post);
                    block_arg.push(arg);
                    cur = pooled;
                }
                let flat = cur;
                let feat_pre = self.slice_dense.forward(&flat);
                let feat = ops::relu_forward(&feat_pre);
                fuse_in[s * fdim..(s + 1) * fdim].copy_from_slice(&feat);
                slices.push(PolarSliceTrace {
                    block_in,
                    block_pre,
                    block_post,
                    block_arg,
                    flat,
                    feat_pre,
                });
            }
            let fuse_pre = ops::fuse1x1_forward(
                &fuse_in,
                l,
                fdim,
                &self.fuse_w.w,
                &self.fuse_b.w,
                self.cfg.fuse_feature,
            );
            let cube_feat = ops::relu_forward(&fuse_pre);
            seq.push(cube_feat);
            cube_traces.push(PolarCubeTrace {
                slices,
                fuse_in,
                fuse_pre,
            });
        }
        let (summary, gru_cache) = self.gru.forward(&seq);
        let logit = self.head.forward(&summary)[0];
        self.trace = Some(PolarTrace {
            cubes: cube_traces,
            gru_cache,
            summary,
            spatial,
        });
        Ok(logit)
    }

    fn backward(&mut self, dlogit: f64) {
        let trace = self.trace.take().expect("backward without a forward pass");
        let dsummary = self.head.backward(&trace.summary, &[dlogit]);
        let dseq = self.gru.backward(&trace.gru_cache, &dsummary);
        let [l, _, _] = self.in_shape;
        let fdim = self.cfg.slice_feature;
        for (cube, dfeat) in trace.cubes.iter().zip(&dseq) {
            let dfuse_pre = ops::relu_backward(&cube.fuse_pre, dfeat);
            let (dfuse_in, dfw, dfb) = ops::fuse1x1_backward(
                &cube.fuse_in,
                l,
                fdim,
                &self.fuse_w.w,
                self.cfg.fuse_feature,
                &dfuse_pre,
            );
            for (a, v) in self.fuse_w.g.iter_mut().zip(&dfw) {
                *a += v;
            }
            for (a, v) in self.fuse_b.g.iter_mut().zip(&dfb) {
                *a += v;
            }
            for (s, tr) in cube.slices.iter().enumerate() {
                let dfeat_pre =
                    ops::relu_backward(&tr.feat_pre, &dfuse_in[s * fdim..(s + 1) * fdim]);
                let mut dcur = self.slice_dense.backward(&tr.flat, &dfeat_pre);
                for b in (0..self.convs.len()).rev() {
                    let (bh, bw) = trace.spatial[b];
                    let dpost = ops::fmp_backward(&dcur, &tr.block_arg[b], tr.block_post[b].len());
                    let dpre = ops::relu_backward(&tr.block_pre[b], &dpost);
                    dcur = self.convs[b].backward(&tr.block_in[b], bh, bw, &dpre);
                }
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps: Vec<&mut Param> = Vec::new();
        for c in &mut self.convs {
            ps.push(&mut c.w);
            ps.push(&mut c.b);
        }
        ps.push(&mut self.slice_dense.w);
        ps.push(&mut self.slice_dense.b);
        ps.push(&mut self.fuse_w);
        ps.push(&mut self.fuse_b);
        ps.extend(self.gru.params_mut());
        ps.push(&mut self.head.w);
        ps.push(&mut self.head.b);
        ps
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in 0..self.convs.len() {
            names.push(format!("conv2d{b}.w"));
            names.push(format!("conv2d{b}.b"));
        }
        names.push("slice_dense.w".into());
        names.push("slice_dense.b".into());
        names.push("fuse.w".into());
        names.push("fuse.b".into());
        names.extend(self.gru.param_names("gru"));
        names.push("head.w".into());
        names.push("head.b".into());
        names
    }

    fn kind(&self) -> &'static str {
        "rcnn2d_polar"
    }
}

struct CartBlockTrace {
    x: Vec<f64>,
    pre: Vec<f64>,
    post: Vec<f64>,
    pool_arg: Option<Vec<usize>>,
    in_dims: [usize; 3],
}

struct CartCubeTrace {
    blocks: Vec<CartBlockTrace>,
    flat: Vec<f64>,
    feat_pre: Vec<f64>,
}

struct CartTrace {
    cubes: Vec<CartCubeTrace>,
    gru_cache: super::gru::GruStackCache,
    summary: Vec<f64>,
}

/// Cartesian 3D recurrent CNN: stacked 3x3x3 convolution blocks with plain
/// 2x pooling after the leading blocks, a dense cube feature, and the same
/// recurrent head as the polar path.
pub struct Cart3dRcnn {
    pub cfg: ArchitectureConfig,
    pub in_shape: [usize; 3],
    convs: Vec<Conv3d>,
    cube_dense: Dense,
    gru: GruStack,
    head: Dense,
    trace: Option<CartTrace>,
}

impl Cart3dRcnn {
    /// `in_shape` is `[depth, height, width]` per cube.
    pub fn new(cfg: &ArchitectureConfig, in_shape: [usize; 3]) -> Result<Self, NnError> {
        cfg.validate()?;
        if in_shape.iter().any(|&d| d == 0) {
            return Err(NnError::BadConfig("empty cube shape".into()));
        }
        let mut dims = in_shape;
        for b in 0..cfg.pool3d_count {
            dims = [dims[0] / 2, dims[1] / 2, dims[2] / 2];
            if dims.iter().any(|&d| d == 0) {
                return Err(NnError::BadConfig(format!(
                    "pool {b} empties a {}x{}x{} cube",
                    in_shape[0], in_shape[1], in_shape[2]
                )));
            }
        }
        let mut r = rng::stream(cfg.seed, "init_rcnn3d", &[0]);
        let mut convs = Vec::new();
        let mut ci = 1;
        for &co in &cfg.conv3d_channels {
            convs.push(Conv3d::new(ci, co, &mut r));
            ci = co;
        }
        let flat = ci * dims[0] * dims[1] * dims[2];
        let cube_dense = Dense::new(flat, cfg.cube_feature, &mut r);
        let gru = GruStack::new(cfg.cube_feature, cfg.gru_hidden, cfg.gru_layers, cfg.bidirectional, &mut r);
        let head = Dense::new(gru.summary_width(), 1, &mut r);
        Ok(Cart3dRcnn {
            cfg: cfg.clone(),
            in_shape,
            convs,
            cube_dense,
            gru,
            head,
            trace: None,
        })
    }
}

impl SequenceModel for Cart3dRcnn {
    fn forward(&mut self, input: &ModelInput, _draw: u64) -> Result<f64, NnError> {
        let cubes = match input {
            ModelInput::Cubes(c) if !c.is_empty() => c,
            ModelInput::Cubes(_) => {
                return Err(NnError::ShapeMismatch("empty cube sequence".into()))
            }
            ModelInput::Sequence(_) => {
                return Err(NnError::ShapeMismatch("cube input required".into()))
            }
        };
        for c in cubes.iter() {
            if c.dims != self.in_shape {
                return Err(NnError::ShapeMismatch(format!(
                    "cube {}x{}x{}, expected {}x{}x{}",
                    c.dims[0], c.dims[1], c.dims[2], self.in_shape[0], self.in_shape[1], self.in_shape[2]
                )));
            }
        }
        let mut seq = Vec::with_capacity(cubes.len());
        let mut cube_traces = Vec::with_capacity(cubes.len());
        for cube in cubes {
            let mut cur = cube.data.clone();
            let mut dims = self.in_shape;
            let mut blocks = Vec::with_capacity(self.convs.len());
            for (b, conv) in self.convs.iter().enumerate() {
                let in_dims = dims;
                let pre = conv.forward(&cur, dims[0], dims[1], dims[2]);
                let post = ops::relu_forward(&pre);
                let (next, arg) = if b < self.cfg.pool3d_count {
                    let (pooled, arg, od) =
                        ops::maxpool3d_forward(&post, conv.co, dims[0], dims[1], dims[2]);
                    dims = od;
                    (pooled, Some(arg))
                } else {
                    (post.clone(), None)
                };
                blocks.push(CartBlockTrace {
                    x: cur,
                    pre,
                    post,
                    pool_arg: arg,
                    in_dims,
                });
                cur = next;
            }
            let flat = cur;
            let feat_pre = self.cube_dense.forward(&flat);
            let feat = ops::relu_forward(&feat_pre);
            seq.push(feat);
            cube_traces.push(CartCubeTrace {
                blocks,
                flat,
                feat_pre,
            });
        }
        let (summary, gru_cache) = self.gru.forward(&seq);
        let logit = self.head.forward(&summary)[0];
        self.trace = Some(CartTrace {
            cubes: cube_traces,
            gru_cache,
            summary,
        });
        Ok(logit)
    }

    fn backward(&mut self, dlogit: f64) {
        let trace = self.trace.take().expect("backward without a forward pass");
        let dsummary = self.head.backward(&trace.summary, &[dlogit]);
        let dseq = self.gru.backward(&trace.gru_cache, &dsummary);
        for (cube, dfeat) in trace.cubes.iter().zip(&dseq) {
            let dfeat_pre = ops::relu_backward(&cube.feat_pre, dfeat);
            let mut dcur = self.cube_dense.backward(&cube.flat, &dfeat_pre);
            for (b, tr) in cube.blocks.iter().enumerate().rev() {
                let dpost = match &tr.pool_arg {
                    Some(arg) => ops::maxpool3d_backward(&dcur, arg, tr.post.len()),
                    None => dcur,
                };
                let dpre = ops::relu_backward(&tr.pre, &dpost);
                let [d, h, w] = tr.in_dims;
                dcur = self.convs[b].backward(&tr.x, d, h, w, &dpre);
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps: Vec<&mut Param> = Vec::new();
        for c in &mut self.convs {
            ps.push(&mut c.w);
            ps.push(&mut c.b);
        }
        ps.push(&mut self.cube_dense.w);
        ps.push(&mut self.cube_dense.b);
        ps.extend(self.gru.params_mut());
        ps.push(&mut self.head.w);
        ps.push(&mut self.head.b);
        ps
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in 0..self.convs.len() {
            names.push(format!("conv3d{b}.w"));
            names.push(format!("conv3d{b}.b"));
        }
        names.push("cube_dense.w".into());
        names.push("cube_dense.b".into());
        names.extend(self.gru.param_names("gru"));
        names.push("head.w".into());
        names.push("head.b".into());
        names
    }

    fn kind(&self) -> &'static str {
        "rcnn3d_baseline"
    }
}

struct ShapeElementTrace {
    x: Vec<f64>,
    pre: Vec<Vec<f64>>,
}

struct ShapeTrace {
    elements: Vec<ShapeElementTrace>,
    gru_cache: super::gru::GruStackCache,
    summary: Vec<f64>,
}

/// Feature-sequence classifier: a three-layer dense map per sequence
/// element (activation on the first two layers) feeding the recurrent
/// stack.
pub struct ShapeGru {
    pub cfg: ArchitectureConfig,
    pub f_in: usize,
    mlp: Vec<Dense>,
    gru: GruStack,
    head: Dense,
    trace: Option<ShapeTrace>,
}

impl ShapeGru {
    pub fn new(cfg: &ArchitectureConfig, f_in: usize) -> Result<Self, NnError> {
        cfg.validate()?;
        if f_in == 0 {
            return Err(NnError::BadConfig("empty element features".into()));
        }
        let mut r = rng::stream(cfg.seed, "init_gru_mlp", &[0]);
        let mut mlp = Vec::with_capacity(3);
        let mut n_in = f_in;
        for &w in &cfg.mlp_widths {
            mlp.push(Dense::new(n_in, w, &mut r));
            n_in = w;
        }
        let gru = GruStack::new(n_in, cfg.gru_hidden, cfg.gru_layers, cfg.bidirectional, &mut r);
        let head = Dense::new(gru.summary_width(), 1, &mut r);
        Ok(ShapeGru {
            cfg: cfg.clone(),
            f_in,
            mlp,
            gru,
            head,
            trace: None,
        })
    }
}

impl SequenceModel for ShapeGru {
    fn forward(&mut self, input: &ModelInput, _draw: u64) -> Result<f64, NnError> {
        let rows = match input {
            ModelInput::Sequence(s) if !s.is_empty() => s,
            ModelInput::Sequence(_) => {
                return Err(NnError::ShapeMismatch("empty feature sequence".into()))
            }
            ModelInput::Cubes(_) => {
                return Err(NnError::ShapeMismatch("feature-sequence input required".into()))
            }
        };
        for row in rows.iter() {
            if row.len() != self.f_in {
                return Err(NnError::ShapeMismatch(format!(
                    "element width {}, expected {}",
                    row.len(),
                    self.f_in
                )));
            }
        }
        let mut seq = Vec::with_capacity(rows.len());
        let mut elements = Vec::with_capacity(rows.len());
        for row in rows {
            let mut pre = Vec::with_capacity(3);
            let mut cur = row.clone();
            for (i, layer) in self.mlp.iter().enumerate() {
                let p = layer.forward(&cur);
                cur = if i < 2 { ops::relu_forward(&p) } else { p.clone() };
                pre.push(p);
            }
            seq.push(cur);
            elements.push(ShapeElementTrace { x: row.clone(), pre });
        }
        let (summary, gru_cache) = self.gru.forward(&seq);
        let logit = self.head.forward(&summary)[0];
        self.trace = Some(ShapeTrace {
            elements,
            gru_cache,
            summary,
        });
        Ok(logit)
    }

    fn backward(&mut self, dlogit: f64) {
        let trace = self.trace.take().expect("backward without a forward pass");
        let dsummary = self.head.backward(&trace.summary, &[dlogit]);
        let dseq = self.gru.backward(&trace.gru_cache, &dsummary);
        for (el, dout) in trace.elements.iter().zip(&dseq) {
            let mut dcur = dout.clone();
            for i in (0..3).rev() {
                if i < 2 {
                    dcur = ops::relu_backward(&el.pre[i], &dcur);
                }
                // Input to layer i is the activated output of layer i-1.
                dcur = if i == 0 {
                    self.mlp[i].backward(&el.x, &dcur)
                } else {
                    let x = ops::relu_forward(&el.pre[i - 1]);
                    self.mlp[i].backward(&x, &dcur)
                };
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps: Vec<&mut Param> = Vec::new();
        for d in &mut self.mlp {
            ps.push(&mut d.w);
            ps.push(&mut d.b);
        }
        ps.extend(self.gru.params_mut());
        ps.push(&mut self.head.w);
        ps.push(&mut self.head.b);
        ps
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.mlp.len() {
            names.push(format!("mlp{i}.w"));
            names.push(format!("mlp{i}.b"));
        }
        names.extend(self.gru.param_names("gru"));
        names.push("head.w".into());
        names.push("head.b".into());
        names
    }

    fn kind(&self) -> &'static str {
        "radiomics_gru"
    }
}
