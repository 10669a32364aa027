//! Softened gravitational pair sums over signed point masses.
//!
//! Kernel: `K_ε(r) = -1 / (4π sqrt(|r|² + ε²))`, the Plummer regularisation
//! of the Newtonian kernel `-1/(4π|r|)`. Self pairs are kept: with ε > 0
//! they are finite and part of the quadrature of the smooth density.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

pub type Vec3<T> = [T; 3];

/// `K_ε`, `∇K_ε` and `∇²K_ε` at displacement `r`.
#[inline]
pub fn kernel<T: Real>(r: &Vec3<T>, eps: T) -> (T, Vec3<T>, [[T; 3]; 3]) {
    let u = r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + eps * eps;
    let inv4pi = T::one() / (T::lit(4.0) * T::PI());
    let s = u.sqrt();
    let u32 = u * s;
    let k = -inv4pi / s;
    let a = inv4pi / u32;
    let g = [a * r[0], a * r[1], a * r[2]];
    let b = T::lit(3.0) * inv4pi / (u32 * u);
    let mut h = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            h[i][j] = -b * r[i] * r[j];
        }
        h[i][i] = h[i][i] + a;
    }
    (k, g, h)
}

/// `∇K_ε` only.
#[inline]
pub fn kernel_grad<T: Real>(r: &Vec3<T>, eps: T) -> (T, Vec3<T>) {
    let u = r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + eps * eps;
    let inv4pi = T::one() / (T::lit(4.0) * T::PI());
    let s = u.sqrt();
    let a = inv4pi / (u * s);
    (-inv4pi / s, [a * r[0], a * r[1], a * r[2]])
}

/// Third derivatives `∂_i∂_j∂_k K_ε`.
fn kernel_third<T: Real>(r: &Vec3<T>, eps: T) -> [[[T; 3]; 3]; 3] {
    let u = r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + eps * eps;
    let inv4pi = T::one() / (T::lit(4.0) * T::PI());
    let s = u.sqrt();
    let u52 = u * u * s;
    let c1 = -T::lit(3.0) * inv4pi / u52;
    let c2 = T::lit(15.0) * inv4pi / (u52 * u);
    let mut t = [[[T::zero(); 3]; 3]; 3];
    let d = |a: usize, b: usize| if a == b { T::one() } else { T::zero() };
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                t[i][j][k] = c1 * (d(i, j) * r[k] + d(i, k) * r[j] + d(j, k) * r[i]) + c2 * r[i] * r[j] * r[k];
            }
        }
    }
    t
}

#[inline]
fn sub<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Signed point masses.
#[derive(Debug, Clone, Default)]
pub struct Sources<T> {
    pub points: Vec<Vec3<T>>,
    pub charges: Vec<T>,
}

impl<T: Real> Sources<T> {
    pub fn push(&mut self, p: Vec3<T>, q: T) {
        self.points.push(p);
        self.charges.push(q);
    }
}

/// How pair sums are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PairMethod {
    Direct,
    /// Barnes-Hut with opening angle `theta`.
    Tree { theta: f64 },
}

/// Potential and its gradient at each target.
pub fn field<T: Real>(src: &Sources<T>, targets: &[Vec3<T>], eps: T, method: PairMethod) -> Vec<(T, Vec3<T>)> {
    match method {
        PairMethod::Direct => targets.par_iter().map(|x| direct_at(src, x, eps)).collect(),
        PairMethod::Tree { theta } => {
            let tree = Tree::build(src);
            let th = T::lit(theta);
            targets.par_iter().map(|x| tree.eval(src, x, eps, th)).collect()
        }
    }
}

fn direct_at<T: Real>(src: &Sources<T>, x: &Vec3<T>, eps: T) -> (T, Vec3<T>) {
    let mut p = T::zero();
    let mut g = [T::zero(); 3];
    for (y, q) in src.points.iter().zip(&src.charges) {
        let (k, gk) = kernel_grad(&sub(x, y), eps);
        p = p + *q * k;
        for i in 0..3 {
            g[i] = g[i] + *q * gk[i];
        }
    }
    (p, g)
}

struct Node<T> {
    center: Vec3<T>,
    half: T,
    mono: T,
    dip: Vec3<T>,
    quad: [[T; 3]; 3],
    /// Children indices, or a range of source indices for leaves.
    children: Vec<usize>,
    leaf: Option<(usize, usize)>,
}

/// Octree over signed sources, multipoles up to quadrupole order about the
/// geometric centre of each cell.
pub struct Tree<T> {
    nodes: Vec<Node<T>>,
    order: Vec<usize>,
}

const LEAF_SIZE: usize = 8;

impl<T: Real> Tree<T> {
    pub fn build(src: &Sources<T>) -> Self {
        let n = src.points.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut lo = [T::infinity(); 3];
        let mut hi = [T::neg_infinity(); 3];
        for p in &src.points {
            for i in 0..3 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let mut tree = Tree { nodes: Vec::new(), order: Vec::new() };
        if n == 0 {
            return tree;
        }
        let center = [0, 1, 2].map(|i| (lo[i] + hi[i]) * T::lit(0.5));
        let half = (0..3).fold(T::zero(), |m, i| m.max((hi[i] - lo[i]) * T::lit(0.5))) * T::lit(1.0001) + T::lit(1e-12);
        tree.split(src, &mut order, 0, n, center, half, 0);
        tree.order = order;
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn split(&mut self, src: &Sources<T>, order: &mut [usize], a: usize, b: usize, center: Vec3<T>, half: T, depth: usize) -> usize {
        let idx = self.nodes.len();
        let mut mono = T::zero();
        let mut dip = [T::zero(); 3];
        let mut quad = [[T::zero(); 3]; 3];
        for &k in &order[a..b] {
            let q = src.charges[k];
            let d = sub(&src.points[k], &center);
            mono = mono + q;
            for i in 0..3 {
                dip[i] = dip[i] + q * d[i];
                for j in 0..3 {
                    quad[i][j] = quad[i][j] + q * d[i] * d[j];
                }
            }
        }
        self.nodes.push(Node {
            center,
            half,
            mono,
            dip,
            quad,
            children: Vec::new(),
            leaf: None,
        });
        if b - a <= LEAF_SIZE || depth > 40 {
            self.nodes[idx].leaf = Some((a, b));
            return idx;
        }
        // Partition into octants (stable, deterministic).
        let oct = |p: &Vec3<T>| (0..3).fold(0usize, |o, i| o | (usize::from(p[i] >= center[i]) << i));
        let slice = &mut order[a..b];
        slice.sort_by_key(|k| oct(&src.points[*k]));
        let mut start = a;
        let mut children = Vec::new();
        for o in 0..8 {
            let mut end = start;
            while end < b && oct(&src.points[order[end]]) == o {
                end += 1;
            }
            if end > start {
                let h2 = half * T::lit(0.5);
                let c = [0, 1, 2].map(|i| if (o >> i) & 1 == 1 { center[i] + h2 } else { center[i] - h2 });
                children.push(self.split(src, order, start, end, c, h2, depth + 1));
            }
            start = end;
        }
        self.nodes[idx].children = children;
        idx
    }

    pub fn eval(&self, src: &Sources<T>, x: &Vec3<T>, eps: T, theta: T) -> (T, Vec3<T>) {
        let mut p = T::zero();
        let mut g = [T::zero(); 3];
        if self.nodes.is_empty() {
            return (p, g);
        }
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let nd = &self.nodes[i];
            let r = sub(x, &nd.center);
            let dist = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            if let Some((a, b)) = nd.leaf {
                for &k in &self.order[a..b] {
                    let (kk, gk) = kernel_grad(&sub(x, &src.points[k]), eps);
                    let q = src.charges[k];
                    p = p + q * kk;
                    for d in 0..3 {
                        g[d] = g[d] + q * gk[d];
                    }
                }
            } else if T::lit(2.0) * nd.half < theta * dist {
                let (k0, k1, k2) = kernel(&r, eps);
                let k3 = kernel_third(&r, eps);
                // K(r - d) ≈ K - ∇K·d + ½ dᵀ∇²K d
                let mut pp = nd.mono * k0;
                for a in 0..3 {
                    pp = pp - nd.dip[a] * k1[a];
                    for b in 0..3 {
                        pp = pp + T::lit(0.5) * nd.quad[a][b] * k2[a][b];
                    }
                }
                p = p + pp;
                for c in 0..3 {
                    let mut gc = nd.mono * k1[c];
                    for a in 0..3 {
                        gc = gc - nd.dip[a] * k2[a][c];
                        for b in 0..3 {
                            gc = gc + T::lit(0.5) * nd.quad[a][b] * k3[a][b][c];
                        }
                    }
                    g[c] = g[c] + gc;
                }
            } else {
                stack.extend(nd.children.iter().rev());
            }
        }
        (p, g)
    }
}
