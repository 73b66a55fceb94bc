//! Reverse-mode tape over vector-valued nodes.
//!
//! The op set is deliberately small: exactly what an MLP forward pass,
//! a leapfrog trajectory, and the quadratic losses built on them need.
//! Values live in one flat arena so a cleared tape reuses its buffers
//! across training iterations. Adjoint accumulation visits ops in strict
//! reverse order; every op only references earlier nodes, so the reverse
//! sweep is a valid topological order.

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(u32);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// `c * a` for a constant `c`.
    Scale(NodeId, f64),
    /// `a + c * b` for a constant `c` (the integrator update shape).
    AddScaled(NodeId, NodeId, f64),
    /// `W x` with `W` row-major `rows x cols`.
    MatVec { w: NodeId, x: NodeId, rows: u32, cols: u32 },
    Tanh(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    /// Elementwise quotient.
    Div(NodeId, NodeId),
    /// `a * s[0]` where `s` has length one.
    ScaleBy(NodeId, NodeId),
    /// Inner product, length-one output.
    Dot(NodeId, NodeId),
    /// Squared Euclidean norm, length-one output.
    SqNorm(NodeId),
    Concat(NodeId, NodeId),
}

#[derive(Debug, Clone, Copy)]
struct Record {
    op: Op,
    off: u32,
    len: u32,
}

/// Recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
    values: Vec<f64>,
}

/// Adjoints of every node with respect to one scalar output.
pub struct Gradients {
    adjoints: Vec<f64>,
    spans: Vec<(u32, u32)>,
}

impl Gradients {
    /// Gradient of the backward output with respect to node `id`.
    pub fn wrt(&self, id: NodeId) -> &[f64] {
        let (off, len) = self.spans[id.0 as usize];
        &self.adjoints[off as usize..(off + len) as usize]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Drop all nodes but keep allocated capacity.
    pub fn clear(&mut self) {
        self.records.clear();
        self.values.clear();
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let r = self.records[id.0 as usize];
        &self.values[r.off as usize..(r.off + r.len) as usize]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "expected a scalar node");
        v[0]
    }

    fn push(&mut self, op: Op, value: impl IntoIterator<Item = f64>) -> NodeId {
        let off = self.values.len() as u32;
        self.values.extend(value);
        let len = self.values.len() as u32 - off;
        self.records.push(Record { op, off, len });
        NodeId(self.records.len() as u32 - 1)
    }

    fn slice(&self, id: NodeId) -> (usize, usize) {
        let r = self.records[id.0 as usize];
        (r.off as usize, r.len as usize)
    }

    pub fn leaf(&mut self, value: &[f64]) -> NodeId {
        self.push(Op::Leaf, value.iter().copied())
    }

    pub fn leaf_scalar(&mut self, value: f64) -> NodeId {
        self.push(Op::Leaf, [value])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ao, al) = self.slice(a);
        let (bo, bl) = self.slice(b);
        assert_eq!(al, bl);
        let vals: Vec<f64> = (0..al)
            .map(|i| self.values[ao + i] + self.values[bo + i])
            .collect();
        self.push(Op::Add(a, b), vals)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ao, al) = self.slice(a);
        let (bo, bl) = self.slice(b);
        assert_eq!(al, bl);
        let vals: Vec<f64> = (0..al)
            .map(|i| self.values[ao + i] - self.values[bo + i])
            .collect();
        self.push(Op::Sub(a, b), vals)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let (ao, al) = self.slice(a);
        let vals: Vec<f64> = (0..al).map(|i| c * self.values[ao + i]).collect();
        self.push(Op::Scale(a, c), vals)
    }

    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, c: f64) -> NodeId {
        let (ao, al) = self.slice(a);
        let (bo, bl) = self.slice(b);
        assert_eq!(al, bl);
        let vals: Vec<f64> = (0..al)
            .map(|i| self.values[ao + i] + c * self.values[bo + i])
            .collect();
        self.push(Op::AddScaled(a, b, c), vals)
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let (wo, wl) = self.slice(w);
        let (xo, xl) = self.slice(x);
        assert_eq!(wl, rows * cols);
        assert_eq!(xl, cols);
        let mut vals = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &self.values[wo + r * cols..wo + (r + 1) * cols];
            let xs = &self.values[xo..xo + cols];
            vals.push(row.iter().zip(xs).map(|(a, b)| a * b).sum());
        }
        self.push(
            Op::MatVec { w, x, rows: rows as u32, cols: cols as u32 },
            vals,
        )
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let (ao, al) = self.slice(a);
        let vals: Vec<f64> = (0..al).map(|i| self.values[ao + i].tanh()).collect();
        self.push(Op::Tanh(a), vals)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let (ao, al) = self.slice(a);
        let vals: Vec<f64> = (0..al).map(|i| self.values[ao + i].sin()).collect();
        self.push(Op::Sin(a), vals)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let (ao, al) = self.slice(a);
        let vals: Vec<f64> = (0..al).map(|i| self.values[ao + i].cos()).collect();
        self.push(Op::Cos(a), vals)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ao, al) = self.slice(a);
        let (bo, bl) = self.slice(b);
        assert_eq!(al, bl);
        let vals: Vec<f64> = (0..al)
            .map(|i| self.values[ao + i] * self.values[bo + i])
            .collect();
        self.push(Op::Mul(a, b), vals)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ao, al) = self.slice(a);
        let (bo, bl) = self.slice(b);
        assert_eq!(al, bl);
        let vals: Vec<f64> = (0..al)
            .map(|i| self.values[ao + i] / self.values[bo + i])
            .collect();
        self.push(Op::Div(a, b), vals)
    }

    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> NodeId {
        let (ao, al) = self.slice(a);
        let (so, sl) = self.slice(s);
        assert_eq!(sl, 1);
        let c = self.values[so];
        let vals: Vec<f64> = (0..al).map(|i| c * self.values[ao + i]).collect();
        self.push(Op::ScaleBy(a, s), vals)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ao, al) = self.slice(a);
        let (bo, bl) = self.slice(b);
        assert_eq!(al, bl);
        let v: f64 = (0..al)
            .map(|i| self.values[ao + i] * self.values[bo + i])
            .sum();
        self.push(Op::Dot(a, b), [v])
    }

    pub fn sq_norm(&mut self, a: NodeId) -> NodeId {
        let (ao, al) = self.slice(a);
        let v: f64 = (0..al).map(|i| self.values[ao + i].powi(2)).sum();
        self.push(Op::SqNorm(a), [v])
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ao, al) = self.slice(a);
        let (bo, bl) = self.slice(b);
        let vals: Vec<f64> = self.values[ao..ao + al]
            .iter()
            .chain(&self.values[bo..bo + bl])
            .copied()
            .collect();
        self.push(Op::Concat(a, b), vals)
    }

    /// Reverse-mode sweep from a scalar `output`. Returns adjoints for every
    /// node; multiple sweeps from different outputs may be run on one tape.
    pub fn backward(&self, output: NodeId) -> Gradients {
        let out = self.records[output.0 as usize];
        assert_eq!(out.len, 1, "backward requires a scalar output node");
        let mut adj = vec![0.0; self.values.len()];
        adj[out.off as usize] = 1.0;

        for idx in (0..=output.0 as usize).rev() {
            let rec = self.records[idx];
            let (go, gl) = (rec.off as usize, rec.len as usize);
            match rec.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let (ao, _) = self.slice(a);
                    let (bo, _) = self.slice(b);
                    for i in 0..gl {
                        let g = adj[go + i];
                        adj[ao + i] += g;
                        adj[bo + i] += g;
                    }
                }
                Op::Sub(a, b) => {
                    let (ao, _) = self.slice(a);
                    let (bo, _) = self.slice(b);
                    for i in 0..gl {
                        let g = adj[go + i];
                        adj[ao + i] += g;
                        adj[bo + i] -= g;
                    }
                }
                Op::Scale(a, c) => {
                    let (ao, _) = self.slice(a);
                    for i in 0..gl {
                        adj[ao + i] += c * adj[go + i];
                    }
                }
                Op::AddScaled(a, b, c) => {
                    let (ao, _) = self.slice(a);
                    let (bo, _) = self.slice(b);
                    for i in 0..gl {
                        let g = adj[go + i];
                        adj[ao + i] += g;
                        adj[bo + i] += c * g;
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (wo, _) = self.slice(w);
                    let (xo, _) = self.slice(x);
                    let (rows, cols) = (rows as usize, cols as usize);
                    for r in 0..rows {
                        let g = adj[go + r];
                        if g == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            adj[wo + r * cols + c] += g * self.values[xo + c];
                            adj[xo + c] += g * self.values[wo + r * cols + c];
                        }
                    }
                }
                Op::Tanh(a) => {
                    let (ao, _) = self.slice(a);
                    for i in 0..gl {
                        let y = self.values[go + i];
                        adj[ao + i] += (1.0 - y * y) * adj[go + i];
                    }
                }
                Op::Sin(a) => {
                    let (ao, _) = self.slice(a);
                    for i in 0..gl {
                        adj[ao + i] += self.values[ao + i].cos() * adj[go + i];
                    }
                }
                Op::Cos(a) => {
                    let (ao, _) = self.slice(a);
                    for i in 0..gl {
                        adj[ao + i] -= self.values[ao + i].sin() * adj[go + i];
                    }
                }
                Op::Mul(a, b) => {
                    let (ao, _) = self.slice(a);
                    let (bo, _) = self.slice(b);
                    for i in 0..gl {
                        let g = adj[go + i];
                        adj[ao + i] += self.values[bo + i] * g;
                        adj[bo + i] += self.values[ao + i] * g;
                    }
                }
                Op::Div(a, b) => {
                    let (ao, _) = self.slice(a);
                    let (bo, _) = self.slice(b);
                    for i in 0..gl {
                        let g = adj[go + i];
                        let bv = self.values[bo + i];
                        adj[ao + i] += g / bv;
                        adj[bo + i] -= g * self.values[go + i] / bv;
                    }
                }
                Op::ScaleBy(a, s) => {
                    let (ao, al) = self.slice(a);
                    let (so, _) = self.slice(s);
                    let c = self.values[so];
                    for i in 0..al {
                        let g = adj[go + i];
                        adj[ao + i] += c * g;
                        adj[so] += self.values[ao + i] * g;
                    }
                }
                Op::Dot(a, b) => {
                    let (ao, al) = self.slice(a);
                    let (bo, _) = self.slice(b);
                    let g = adj[go];
                    for i in 0..al {
                        adj[ao + i] += g * self.values[bo + i];
                        adj[bo + i] += g * self.values[ao + i];
                    }
                }
                Op::SqNorm(a) => {
                    let (ao, al) = self.slice(a);
                    let g = adj[go];
                    for i in 0..al {
                        adj[ao + i] += 2.0 * g * self.values[ao + i];
                    }
                }
                Op::Concat(a, b) => {
                    let (ao, al) = self.slice(a);
                    let (bo, bl) = self.slice(b);
                    for i in 0..al {
                        adj[ao + i] += adj[go + i];
                    }
                    for i in 0..bl {
                        adj[bo + i] += adj[go + al + i];
                    }
                }
            }
        }

        Gradients {
            adjoints: adj,
            spans: self.records.iter().map(|r| (r.off, r.len)).collect(),
        }
    }

    /// Recompute every recorded value from the leaves; true iff the replay
    /// reproduces the stored buffers bit-exactly.
    pub fn replay_check(&self) -> bool {
        let mut fresh = self.values.clone();
        for rec in &self.records {
            let (go, gl) = (rec.off as usize, rec.len as usize);
            let out: Vec<f64> = match rec.op {
                Op::Leaf => continue,
                Op::Add(a, b) => self.zip2(&fresh, a, b, |x, y| x + y),
                Op::Sub(a, b) => self.zip2(&fresh, a, b, |x, y| x - y),
                Op::Scale(a, c) => self.map1(&fresh, a, |x| c * x),
                Op::AddScaled(a, b, c) => self.zip2(&fresh, a, b, |x, y| x + c * y),
                Op::MatVec { w, x, rows, cols } => {
                    let (wo, _) = self.slice(w);
                    let (xo, _) = self.slice(x);
                    let (rows, cols) = (rows as usize, cols as usize);
                    (0..rows)
                        .map(|r| {
                            fresh[wo + r * cols..wo + (r + 1) * cols]
                                .iter()
                                .zip(&fresh[xo..xo + cols])
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect()
                }
                Op::Tanh(a) => self.map1(&fresh, a, f64::tanh),
                Op::Sin(a) => self.map1(&fresh, a, f64::sin),
                Op::Cos(a) => self.map1(&fresh, a, f64::cos),
                Op::Mul(a, b) => self.zip2(&fresh, a, b, |x, y| x * y),
                Op::Div(a, b) => self.zip2(&fresh, a, b, |x, y| x / y),
                Op::ScaleBy(a, s) => {
                    let (so, _) = self.slice(s);
                    let c = fresh[so];
                    self.map1(&fresh, a, |x| c * x)
                }
                Op::Dot(a, b) => vec![self.zip2(&fresh, a, b, |x, y| x * y).iter().sum()],
                Op::SqNorm(a) => vec![self.map1(&fresh, a, |x| x * x).iter().sum()],
                Op::Concat(a, b) => {
                    let (ao, al) = self.slice(a);
                    let (bo, bl) = self.slice(b);
                    fresh[ao..ao + al]
                        .iter()
                        .chain(&fresh[bo..bo + bl])
                        .copied()
                        .collect()
                }
            };
            fresh[go..go + gl].copy_from_slice(&out);
        }
        fresh.iter().zip(&self.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn map1(&self, buf: &[f64], a: NodeId, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let (ao, al) = self.slice(a);
        buf[ao..ao + al].iter().map(|&x| f(x)).collect()
    }

    fn zip2(&self, buf: &[f64], a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (ao, al) = self.slice(a);
        let (bo, _) = self.slice(b);
        (0..al).map(|i| f(buf[ao + i], buf[bo + i])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_sq_norm_gradient_is_input() {
        let mut tape = Tape::new();
        let x = tape.leaf(&[1.0, -2.0, 3.0]);
        let n = tape.sq_norm(x);
        let half = tape.scale(n, 0.5);
        let g = tape.backward(half);
        assert_eq!(g.wrt(x), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn matvec_gradients() {
        let mut tape = Tape::new();
        let w = tape.leaf(&[1.0, 2.0, 3.0, 4.0]); // [[1,2],[3,4]]
        let x = tape.leaf(&[5.0, 6.0]);
        let y = tape.matvec(w, x, 2, 2);
        assert_eq!(tape.value(y), &[17.0, 39.0]);
        let e0 = tape.leaf(&[1.0, 0.0]);
        let c = tape.dot(y, e0);
        let g = tape.backward(c);
        assert_eq!(g.wrt(w), &[5.0, 6.0, 0.0, 0.0]);
        assert_eq!(g.wrt(x), &[1.0, 2.0]);
    }

    #[test]
    fn chain_through_trig_and_div() {
        // f(t) = sin(2t)/cos(2t); f'(t) = 2 / cos^2(2t)
        let t0 = 0.3;
        let mut tape = Tape::new();
        let t = tape.leaf_scalar(t0);
        let two_t = tape.scale(t, 2.0);
        let s = tape.sin(two_t);
        let c = tape.cos(two_t);
        let f = tape.div(s, c);
        let g = tape.backward(f);
        let expected = 2.0 / (2.0 * t0).cos().powi(2);
        assert!((g.wrt(t)[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn multiple_backward_passes_share_one_tape() {
        let mut tape = Tape::new();
        let x = tape.leaf(&[2.0, 3.0]);
        let y = tape.mul(x, x);
        let e0 = tape.leaf(&[1.0, 0.0]);
        let e1 = tape.leaf(&[0.0, 1.0]);
        let y0 = tape.dot(y, e0);
        let y1 = tape.dot(y, e1);
        let g0 = tape.backward(y0);
        let g1 = tape.backward(y1);
        assert_eq!(g0.wrt(x), &[4.0, 0.0]);
        assert_eq!(g1.wrt(x), &[0.0, 6.0]);
    }

    #[test]
    fn replay_reproduces_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(&[0.1, 0.2, 0.3]);
        let s = tape.sin(x);
        let c = tape.cos(x);
        let m = tape.mul(s, c);
        let cat = tape.concat(m, x);
        let _ = tape.sq_norm(cat);
        assert!(tape.replay_check());
    }

    #[test]
    fn scale_by_scalar_node() {
        let mut tape = Tape::new();
        let x = tape.leaf(&[1.0, 2.0]);
        let s = tape.leaf_scalar(3.0);
        let y = tape.scale_by(x, s);
        assert_eq!(tape.value(y), &[3.0, 6.0]);
        let n = tape.sq_norm(y);
        let g = tape.backward(n);
        // d/ds sum (s x_i)^2 = 2 s sum x_i^2 = 2*3*5
        assert_eq!(g.wrt(s), &[30.0]);
        assert_eq!(g.wrt(x), &[18.0, 36.0]);
    }
}
