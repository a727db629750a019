//! Graph execution: a reusable single-item evaluator that caches what the
//! exact backward pass needs, plus a convenience batch forward.
//!
//! Three structural facts keep this fast. A conv -> (ReLU) -> pool chain
//! runs as one unit that streams each output channel through an L1-sized
//! scratch plane, so full-resolution activations never hit memory. The
//! winner values of a max pool are its outputs, so the ReLU gradient mask
//! for the fused backward can be read off the pooled result. And the
//! gradient leaving a pool is nonzero only at the recorded winners, so
//! pool and conv backward fuse into one sparse pass without any
//! full-resolution gradient plane.

use super::{LayerKind, ModelParams, NetworkSpec, NodeRef};
use crate::error::{Error, Result};
use crate::tensor::ops::{
    bilinear_resize, concat_channels, conv_backward_kernel, conv_forward_into, maxpool_into,
    relu_backward, relu_forward, window_argmax,
};
use crate::tensor::{Shape4, Tensor};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
enum Step {
    /// conv -> (ReLU) -> pool, streamed per output channel.
    ConvPoolUnit {
        name: String,
        src: NodeRef,
        relu: bool,
        pool_node: usize,
        /// clamped (start, end) window bounds per output row/column
        ys: Vec<(usize, usize)>,
        xs: Vec<(usize, usize)>,
    },
    Conv { name: String, src: NodeRef, relu: bool, node: usize },
    Pool { kernel: (usize, usize), stride: usize, pad: usize, src: NodeRef, node: usize },
    Relu { src: NodeRef, node: usize },
    Concat { srcs: Vec<NodeRef>, node: usize },
    Downsample { target: (usize, usize), src: NodeRef, node: usize },
}

#[derive(Debug, Clone)]
enum BackStep {
    /// Pool backward routed straight into the producing conv: per
    /// (channel, cell) winner, accumulate weight/bias gradients and
    /// optionally the gradient w.r.t. the conv's input.
    FusedPoolConv {
        pool_node: usize,
        name: String,
        relu: bool,
        src: NodeRef,
        need_src_grad: bool,
    },
    /// Dense conv backward for convs not feeding a pool (e.g. the sink).
    ConvDense { conv_node: usize, name: String, relu: bool, src: NodeRef, need_src_grad: bool },
    /// Plain pool backward scattering into a dense source-grad buffer.
    PoolDense { pool_node: usize, src_node: usize },
    ReluDense { relu_node: usize, src_node: usize },
    /// Splits the concat gradient back into the branch buffers.
    ConcatScatter { concat_node: usize, srcs: Vec<NodeRef> },
}

/// Accumulated parameter gradients for one network, keyed by conv name.
#[derive(Debug, Clone)]
pub struct GradStore {
    pub by_name: BTreeMap<String, (Tensor, Vec<f32>)>,
}

impl GradStore {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let mut by_name = BTreeMap::new();
        for l in &spec.layers {
            if let LayerKind::PointwiseConv { c_in, c_out } = l.kind {
                by_name.insert(
                    l.name.clone(),
                    (Tensor::zeros(Shape4::new(c_out, c_in, 1, 1)), vec![0.0; c_out]),
                );
            }
        }
        GradStore { by_name }
    }

    pub fn clear(&mut self) {
        for (w, b) in self.by_name.values_mut() {
            for v in w.data_mut() {
                *v = 0.0;
            }
            for v in b.iter_mut() {
                *v = 0.0;
            }
        }
    }
}

/// Reusable forward/backward workspace for one network on batch-size-1
/// inputs. Buffers are allocated once; repeated calls do not allocate.
pub struct Evaluator {
    steps: Vec<Step>,
    back_steps: Vec<BackStep>,
    /// per-node activation buffers; None for nodes folded into a unit
    buffers: Vec<Option<Tensor>>,
    /// dense gradient buffers, only for the nodes that need one
    grad: Vec<Option<Tensor>>,
    /// pool winners per pool node
    pool_idx: Vec<Vec<u32>>,
    /// streaming plane for fused units
    scratch: Vec<f32>,
    input_shape: Shape4,
    sink: usize,
    ran_forward: bool,
}

fn clamp_axis(olen: usize, klen: usize, stride: usize, pad: usize, ilen: usize) -> Vec<(usize, usize)> {
    (0..olen)
        .map(|o| {
            let lo = (o * stride) as isize - pad as isize;
            ((lo.max(0)) as usize, ((lo + klen as isize) as usize).min(ilen))
        })
        .collect()
}

impl Evaluator {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let n_nodes = spec.layers.len();

        let mut consumers = vec![0usize; n_nodes];
        for l in &spec.layers {
            for r in &l.inputs {
                if let NodeRef::Node(j) = r {
                    consumers[*j] += 1;
                }
            }
        }

        // unit detection: pool <- (relu <-)? conv, all single-consumer
        // unit_of[pool] = (conv_node, relu_node?)
        let mut unit_conv: Vec<Option<(usize, Option<usize>)>> = vec![None; n_nodes];
        for (idx, l) in spec.layers.iter().enumerate() {
            if let LayerKind::MaxPool { .. } = l.kind {
                if let [NodeRef::Node(j)] = l.inputs[..] {
                    match &spec.layers[j].kind {
                        LayerKind::Relu if consumers[j] == 1 => {
                            if let [NodeRef::Node(c)] = spec.layers[j].inputs[..] {
                                if consumers[c] == 1
                                    && matches!(
                                        spec.layers[c].kind,
                                        LayerKind::PointwiseConv { .. }
                                    )
                                {
                                    unit_conv[idx] = Some((c, Some(j)));
                                }
                            }
                        }
                        LayerKind::PointwiseConv { .. } if consumers[j] == 1 => {
                            unit_conv[idx] = Some((j, None));
                        }
                        _ => {}
                    }
                }
            }
        }
        let in_unit = {
            let mut flag = vec![false; n_nodes];
            for u in unit_conv.iter().flatten() {
                flag[u.0] = true;
                if let Some(r) = u.1 {
                    flag[r] = true;
                }
            }
            flag
        };
        // parameters-upstream flags decide which input gradients matter
        let mut upstream = vec![false; n_nodes];
        let has_upstream = |upstream: &[bool], r: &NodeRef| match r {
            NodeRef::Input => false,
            NodeRef::Node(j) => upstream[*j],
        };

        let mut steps: Vec<Step> = Vec::new();
        let mut buffers: Vec<Option<Tensor>> = vec![None; n_nodes];
        let mut pool_idx: Vec<Vec<u32>> = vec![Vec::new(); n_nodes];
        let mut scratch_len = 0usize;

        for (idx, l) in spec.layers.iter().enumerate() {
            let own_params = matches!(l.kind, LayerKind::PointwiseConv { .. });
            upstream[idx] = own_params || l.inputs.iter().any(|r| has_upstream(&upstream, r));

            if in_unit[idx] {
                continue; // emitted at the pool node
            }

            let (c, h, w) = shapes[idx];
            buffers[idx] = Some(Tensor::zeros(Shape4::new(1, c, h, w)));

            let step = match &l.kind {
                LayerKind::PointwiseConv { .. } => {
                    Step::Conv { name: l.name.clone(), src: l.inputs[0], relu: false, node: idx }
                }
                LayerKind::MaxPool { kh, kw, stride, pad } => {
                    pool_idx[idx] = vec![0u32; c * h * w];
                    if let Some((conv, relu_node)) = unit_conv[idx] {
                        let (_, ih, iw) = shapes[conv];
                        scratch_len = scratch_len.max(ih * iw);
                        Step::ConvPoolUnit {
                            name: spec.layers[conv].name.clone(),
                            src: spec.layers[conv].inputs[0],
                            relu: relu_node.is_some(),
                            pool_node: idx,
                            ys: clamp_axis(h, *kh, *stride, *pad, ih),
                            xs: clamp_axis(w, *kw, *stride, *pad, iw),
                        }
                    } else {
                        Step::Pool {
                            kernel: (*kh, *kw),
                            stride: *stride,
                            pad: *pad,
                            src: l.inputs[0],
                            node: idx,
                        }
                    }
                }
                LayerKind::Relu => Step::Relu { src: l.inputs[0], node: idx },
                LayerKind::Concat => Step::Concat { srcs: l.inputs.clone(), node: idx },
                LayerKind::Downsample { factor } => {
                    let (_, ih, iw) = match l.inputs[0] {
                        NodeRef::Input => (spec.input_channels, spec.input_size, spec.input_size),
                        NodeRef::Node(j) => shapes[j],
                    };
                    Step::Downsample { target: (ih / factor, iw / factor), src: l.inputs[0], node: idx }
                }
            };
            steps.push(step);
        }

        // ---- compile the backward pass --------------------------------
        let mut back_steps = Vec::new();
        let mut needs_grad = vec![false; n_nodes];
        needs_grad[n_nodes - 1] = true;

        for idx in (0..n_nodes).rev() {
            if in_unit[idx] {
                continue;
            }
            let l = &spec.layers[idx];
            match &l.kind {
                LayerKind::MaxPool { .. } => {
                    if let Some((conv, relu_node)) = unit_conv[idx] {
                        let src = spec.layers[conv].inputs[0];
                        let need_src_grad = has_upstream(&upstream, &src);
                        if need_src_grad {
                            if let NodeRef::Node(j) = src {
                                needs_grad[j] = true;
                            }
                        }
                        back_steps.push(BackStep::FusedPoolConv {
                            pool_node: idx,
                            name: spec.layers[conv].name.clone(),
                            relu: relu_node.is_some(),
                            src,
                            need_src_grad,
                        });
                    } else {
                        let NodeRef::Node(src_node) = l.inputs[0] else {
                            return Err(Error::Config(
                                "max pooling directly on the input is not trainable".into(),
                            ));
                        };
                        needs_grad[src_node] = true;
                        back_steps.push(BackStep::PoolDense { pool_node: idx, src_node });
                    }
                }
                LayerKind::PointwiseConv { .. } => {
                    let src = l.inputs[0];
                    let need_src_grad = has_upstream(&upstream, &src);
                    if need_src_grad {
                        if let NodeRef::Node(j) = src {
                            needs_grad[j] = true;
                        }
                    }
                    back_steps.push(BackStep::ConvDense {
                        conv_node: idx,
                        name: l.name.clone(),
                        relu: false,
                        src,
                        need_src_grad,
                    });
                }
                LayerKind::Relu => {
                    let NodeRef::Node(src_node) = l.inputs[0] else {
                        return Err(Error::Config("ReLU on the raw input is not trainable".into()));
                    };
                    if has_upstream(&upstream, &l.inputs[0]) {
                        needs_grad[src_node] = true;
                        back_steps.push(BackStep::ReluDense { relu_node: idx, src_node });
                    }
                }
                LayerKind::Concat => {
                    for r in &l.inputs {
                        if let NodeRef::Node(j) = r {
                            if upstream[*j] {
                                needs_grad[*j] = true;
                            }
                        }
                    }
                    back_steps.push(BackStep::ConcatScatter {
                        concat_node: idx,
                        srcs: l.inputs.clone(),
                    });
                }
                LayerKind::Downsample { .. } => {
                    if has_upstream(&upstream, &l.inputs[0]) {
                        return Err(Error::Config(
                            "gradients through downsampling are not supported".into(),
                        ));
                    }
                }
            }
        }

        // gradient buffers use overwrite semantics: sound only for
        // single-consumer nodes
        for idx in 0..n_nodes {
            if needs_grad[idx] && consumers[idx] > 1 {
                return Err(Error::Config(
                    "gradients into multi-consumer nodes are not supported".into(),
                ));
            }
        }
        let grad: Vec<Option<Tensor>> = (0..n_nodes)
            .map(|idx| {
                needs_grad[idx].then(|| {
                    let (c, h, w) = shapes[idx];
                    Tensor::zeros(Shape4::new(1, c, h, w))
                })
            })
            .collect();

        Ok(Evaluator {
            steps,
            back_steps,
            buffers,
            grad,
            pool_idx,
            scratch: vec![0.0; scratch_len],
            input_shape: spec.input_shape(),
            sink: n_nodes - 1,
            ran_forward: false,
        })
    }

    fn src_tensor<'a>(&'a self, r: NodeRef, input: &'a Tensor) -> &'a Tensor {
        match r {
            NodeRef::Input => input,
            NodeRef::Node(j) => self.buffers[j].as_ref().expect("source buffer materialized"),
        }
    }

    fn take_buffer(&mut self, node: usize) -> Tensor {
        self.buffers[node].take().expect("buffer materialized")
    }

    fn put_buffer(&mut self, node: usize, t: Tensor) {
        self.buffers[node] = Some(t);
    }

    fn take_grad(&mut self, node: usize) -> Tensor {
        std::mem::replace(
            self.grad[node].as_mut().expect("grad buffer allocated"),
            Tensor::zeros(Shape4::new(0, 0, 0, 0)),
        )
    }

    fn put_grad(&mut self, node: usize, t: Tensor) {
        self.grad[node] = Some(t);
    }

    /// Runs the graph, caching activations; returns the scalar prediction.
    pub fn forward(&mut self, input: &Tensor, params: &ModelParams) -> Result<f32> {
        if input.shape() != self.input_shape {
            return Err(Error::shape("Evaluator::forward", self.input_shape, input.shape()));
        }
        let steps = std::mem::take(&mut self.steps);
        let result = self.forward_inner(&steps, input, params);
        self.steps = steps;
        result?;
        self.ran_forward = true;
        Ok(self.buffers[self.sink].as_ref().expect("sink buffer").data()[0])
    }

    fn forward_inner(&mut self, steps: &[Step], input: &Tensor, params: &ModelParams) -> Result<()> {
        for step in steps {
            match step {
                Step::ConvPoolUnit { name, src, relu, pool_node, ys, xs } => {
                    let p = params
                        .by_name
                        .get(name)
                        .ok_or_else(|| Error::Config(format!("missing parameters for layer {name}")))?;
                    let mut out = self.take_buffer(*pool_node);
                    let mut cells = std::mem::take(&mut self.pool_idx[*pool_node]);
                    let mut scratch = std::mem::take(&mut self.scratch);
                    {
                        let srct = self.src_tensor(*src, input);
                        let (ih, iw) = (srct.shape().h, srct.shape().w);
                        let hw = ih * iw;
                        let plane = &mut scratch[..hw];
                        let (oh, ow) = (out.shape().h, out.shape().w);
                        let c_in = p.c_in();
                        let w_all = p.weights.data();
                        for o in 0..p.c_out() {
                            // conv channel o into the scratch plane; bias
                            // folds into the first pass, the clamp into
                            // the last
                            let bias = p.bias[o];
                            let wrow = &w_all[o * c_in..(o + 1) * c_in];
                            if c_in == 0 {
                                plane.fill(if *relu && bias < 0.0 { 0.0 } else { bias });
                            }
                            let last = c_in.wrapping_sub(1);
                            for (i, &wv) in wrow.iter().enumerate() {
                                let ip = srct.plane(0, i);
                                match (i == 0, i == last && *relu) {
                                    (true, true) => {
                                        for (ov, iv) in plane.iter_mut().zip(ip.iter()) {
                                            let v = bias + wv * iv;
                                            *ov = if v < 0.0 { 0.0 } else { v };
                                        }
                                    }
                                    (true, false) => {
                                        for (ov, iv) in plane.iter_mut().zip(ip.iter()) {
                                            *ov = bias + wv * iv;
                                        }
                                    }
                                    (false, true) => {
                                        for (ov, iv) in plane.iter_mut().zip(ip.iter()) {
                                            let v = *ov + wv * iv;
                                            *ov = if v < 0.0 { 0.0 } else { v };
                                        }
                                    }
                                    (false, false) => {
                                        for (ov, iv) in plane.iter_mut().zip(ip.iter()) {
                                            *ov += wv * iv;
                                        }
                                    }
                                }
                            }
                            // pool the plane
                            let op = out.plane_mut(0, o);
                            let oc = &mut cells[o * oh * ow..(o + 1) * oh * ow];
                            let mut cell = 0usize;
                            for &(ys0, ys1) in ys {
                                for &(xs0, xs1) in xs {
                                    let (best, at) =
                                        window_argmax(plane, iw, ys0, ys1, xs0, xs1);
                                    op[cell] = best;
                                    oc[cell] = at;
                                    cell += 1;
                                }
                            }
                        }
                    }
                    self.scratch = scratch;
                    self.put_buffer(*pool_node, out);
                    self.pool_idx[*pool_node] = cells;
                }
                Step::Conv { name, src, relu, node } => {
                    let p = params
                        .by_name
                        .get(name)
                        .ok_or_else(|| Error::Config(format!("missing parameters for layer {name}")))?;
                    let mut out = self.take_buffer(*node);
                    conv_forward_into(self.src_tensor(*src, input), p, &mut out, *relu);
                    self.put_buffer(*node, out);
                }
                Step::Pool { kernel, stride, pad, src, node } => {
                    let mut out = self.take_buffer(*node);
                    let mut cells = std::mem::take(&mut self.pool_idx[*node]);
                    maxpool_into(self.src_tensor(*src, input), *kernel, *stride, *pad, &mut out, &mut cells);
                    self.put_buffer(*node, out);
                    self.pool_idx[*node] = cells;
                }
                Step::Concat { srcs, node } => {
                    let parts: Vec<&Tensor> =
                        srcs.iter().map(|r| self.src_tensor(*r, input)).collect();
                    let out = concat_channels(&parts)?;
                    self.put_buffer(*node, out);
                }
                Step::Downsample { target, src, node } => {
                    let out = bilinear_resize(self.src_tensor(*src, input), *target)?;
                    self.put_buffer(*node, out);
                }
                Step::Relu { src, node } => {
                    let out = relu_forward(self.src_tensor(*src, input));
                    self.put_buffer(*node, out);
                }
            }
        }
        Ok(())
    }

    /// Backpropagates d(loss)/d(prediction) through the cached graph and
    /// accumulates parameter gradients into `grads`.
    pub fn backward(
        &mut self,
        d_pred: f32,
        input: &Tensor,
        params: &ModelParams,
        grads: &mut GradStore,
    ) -> Result<()> {
        if !self.ran_forward {
            return Err(Error::Config("backward called before forward".into()));
        }
        let back_steps = std::mem::take(&mut self.back_steps);
        let result = self.backward_inner(&back_steps, d_pred, input, params, grads);
        self.back_steps = back_steps;
        result
    }

    fn backward_inner(
        &mut self,
        back_steps: &[BackStep],
        d_pred: f32,
        input: &Tensor,
        params: &ModelParams,
        grads: &mut GradStore,
    ) -> Result<()> {
        {
            let g = self.grad[self.sink].as_mut().expect("sink grad buffer");
            debug_assert_eq!(g.data().len(), 1);
            g.data_mut()[0] = d_pred;
        }
        for step in back_steps {
            match step {
                BackStep::FusedPoolConv { pool_node, name, relu, src, need_src_grad } => {
                    let p = params
                        .by_name
                        .get(name)
                        .ok_or_else(|| Error::Config(format!("missing parameters for layer {name}")))?;
                    let (dw, db) = grads
                        .by_name
                        .get_mut(name)
                        .ok_or_else(|| Error::Config(format!("missing grad store for layer {name}")))?;
                    let grad_pool = self.take_grad(*pool_node);
                    let pool_out = self.take_buffer(*pool_node);
                    let mut src_grad = if *need_src_grad {
                        let NodeRef::Node(j) = src else { unreachable!() };
                        let mut g = self.take_grad(*j);
                        for v in g.data_mut() {
                            *v = 0.0;
                        }
                        Some((*j, g))
                    } else {
                        None
                    };
                    {
                        let conv_input = self.src_tensor(*src, input);
                        fused_pool_conv_backward(
                            conv_input,
                            &pool_out,
                            &p.weights,
                            &self.pool_idx[*pool_node],
                            &grad_pool,
                            *relu,
                            dw.data_mut(),
                            db,
                            src_grad.as_mut().map(|(_, g)| g),
                        );
                    }
                    if let Some((j, g)) = src_grad {
                        self.put_grad(j, g);
                    }
                    self.put_buffer(*pool_node, pool_out);
                    self.put_grad(*pool_node, grad_pool);
                }
                BackStep::ConvDense { conv_node, name, relu, src, need_src_grad } => {
                    let p = params
                        .by_name
                        .get(name)
                        .ok_or_else(|| Error::Config(format!("missing parameters for layer {name}")))?;
                    let (dw, db) = grads
                        .by_name
                        .get_mut(name)
                        .ok_or_else(|| Error::Config(format!("missing grad store for layer {name}")))?;
                    let mut grad_out = self.take_grad(*conv_node);
                    if *relu {
                        let out = self.buffers[*conv_node].as_ref().expect("conv buffer");
                        for (g, &v) in grad_out.data_mut().iter_mut().zip(out.data()) {
                            if v <= 0.0 {
                                *g = 0.0;
                            }
                        }
                    }
                    let mut src_grad = if *need_src_grad {
                        let NodeRef::Node(j) = src else { unreachable!() };
                        Some((*j, self.take_grad(*j)))
                    } else {
                        None
                    };
                    {
                        let conv_input = self.src_tensor(*src, input);
                        conv_backward_kernel(
                            conv_input,
                            &p.weights,
                            &grad_out,
                            dw.data_mut(),
                            db,
                            src_grad.as_mut().map(|(_, g)| g),
                        );
                    }
                    if let Some((j, g)) = src_grad {
                        self.put_grad(j, g);
                    }
                    self.put_grad(*conv_node, grad_out);
                }
                BackStep::PoolDense { pool_node, src_node } => {
                    let grad_out = self.take_grad(*pool_node);
                    let mut grad_in = self.take_grad(*src_node);
                    for v in grad_in.data_mut() {
                        *v = 0.0;
                    }
                    let hw = grad_in.shape().hw();
                    let ohw = grad_out.shape().hw();
                    let cells = &self.pool_idx[*pool_node];
                    for nc in 0..grad_in.shape().c {
                        let gp = &grad_out.data()[nc * ohw..(nc + 1) * ohw];
                        let ip = &mut grad_in.data_mut()[nc * hw..(nc + 1) * hw];
                        for (&at, &g) in cells[nc * ohw..(nc + 1) * ohw].iter().zip(gp) {
                            ip[at as usize] += g;
                        }
                    }
                    self.put_grad(*src_node, grad_in);
                    self.put_grad(*pool_node, grad_out);
                }
                BackStep::ReluDense { relu_node, src_node } => {
                    let grad_out = self.take_grad(*relu_node);
                    let masked = relu_backward(
                        self.buffers[*src_node].as_ref().expect("relu source buffer"),
                        &grad_out,
                    )?;
                    self.put_grad(*src_node, masked);
                    self.put_grad(*relu_node, grad_out);
                }
                BackStep::ConcatScatter { concat_node, srcs } => {
                    let g = self.take_grad(*concat_node);
                    let mut c_base = 0usize;
                    for r in srcs {
                        let NodeRef::Node(j) = r else { unreachable!() };
                        let c = self.buffers[*j].as_ref().expect("branch buffer").shape().c;
                        if self.grad[*j].is_some() {
                            let mut part = self.take_grad(*j);
                            for ch in 0..c {
                                part.plane_mut(0, ch).copy_from_slice(g.plane(0, c_base + ch));
                            }
                            self.put_grad(*j, part);
                        }
                        c_base += c;
                    }
                    self.put_grad(*concat_node, g);
                }
            }
        }
        Ok(())
    }
}

/// Sparse backward for the conv -> (relu) -> pool unit: the gradient
/// flows only to each cell's winning pixel, masked by the pooled value
/// (the winner's post-ReLU activation). `grad_src`, when present, must
/// arrive zeroed.
#[allow(clippy::too_many_arguments)]
fn fused_pool_conv_backward(
    conv_input: &Tensor,
    pool_out: &Tensor,
    weights: &Tensor,
    cells: &[u32],
    grad_pool: &Tensor,
    relu: bool,
    dw: &mut [f32],
    db: &mut [f32],
    mut grad_src: Option<&mut Tensor>,
) {
    let c_in = weights.shape().c;
    let c_out = weights.shape().n;
    let hw = conv_input.shape().hw();
    let ohw = grad_pool.shape().hw();
    let w = weights.data();
    let in_data = conv_input.data();
    for o in 0..c_out {
        let gp = grad_pool.plane(0, o);
        let winners = pool_out.plane(0, o);
        let plane_cells = &cells[o * ohw..(o + 1) * ohw];
        for ((&at, &g), &win) in plane_cells.iter().zip(gp).zip(winners) {
            if g == 0.0 {
                continue;
            }
            if relu && win <= 0.0 {
                continue;
            }
            let p = at as usize;
            db[o] += g;
            let gw = &mut dw[o * c_in..(o + 1) * c_in];
            for (i, gwi) in gw.iter_mut().enumerate() {
                *gwi += g * in_data[i * hw + p];
            }
            if let Some(gi) = grad_src.as_deref_mut() {
                let wrow = &w[o * c_in..(o + 1) * c_in];
                let gd = gi.data_mut();
                for (i, &wv) in wrow.iter().enumerate() {
                    gd[i * hw + p] += g * wv;
                }
            }
        }
    }
}

/// Convenience batch forward: evaluates each batch item independently and
/// returns one prediction per item.
pub fn forward(spec: &NetworkSpec, params: &ModelParams, input: &Tensor) -> Result<Vec<f32>> {
    let s = input.shape();
    let expect = spec.input_shape();
    if (s.c, s.h, s.w) != (expect.c, expect.h, expect.w) {
        return Err(Error::shape("forward", expect, s));
    }
    params.validate(spec)?;
    let mut ev = Evaluator::new(spec)?;
    let mut preds = Vec::with_capacity(s.n);
    for n in 0..s.n {
        preds.push(ev.forward(&input.item(n), params)?);
    }
    Ok(preds)
}
