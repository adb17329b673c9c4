//! Shared fixtures and an independent f64 re-implementation of the network.
#![allow(dead_code)]

use pcal::geometry::apply_offset;
use pcal::regressor::Weights;
use pcal::render::render_scene;
use pcal::{Image, OffsetEstimate, SceneConfig};

pub fn render_at(scene: &SceneConfig, dx: f64, dy: f64, res: u32) -> Image {
    let believed = apply_offset(&scene.true_extrinsics, OffsetEstimate::new(dx, dy));
    render_scene(scene, &believed, (res, res)).unwrap()
}

const C: [(usize, usize, usize); 3] = [(2, 16, 64), (16, 32, 32), (32, 64, 16)];

/// Straight-line loops; shares nothing with the library's network code.
pub struct Oracle {
    pub k: [Vec<f64>; 3],
    pub b: [Vec<f64>; 3],
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
    pub x: Vec<f64>,
    pub target: [f64; 2],
    pre: [Vec<f64>; 3],
}

fn conv(input: &[f64], in_c: usize, size: usize, k: &[f64], b: &[f64], out_c: usize) -> Vec<f64> {
    let os = size / 2;
    let mut out = vec![0.0; out_c * os * os];
    for o in 0..out_c {
        for oy in 0..os {
            for ox in 0..os {
                let mut s = b[o];
                for i in 0..in_c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (2 * oy + ky) as isize - 1;
                            let ix = (2 * ox + kx) as isize - 1;
                            if iy < 0 || ix < 0 || iy >= size as isize || ix >= size as isize {
                                continue;
                            }
                            s += k[((o * in_c + i) * 3 + ky) * 3 + kx]
                                * input[(i * size + iy as usize) * size + ix as usize];
                        }
                    }
                }
                out[(o * os + oy) * os + ox] = s;
            }
        }
    }
    out
}

/// Adds `scale * k[o_out, i_in]` convolved with `delta` (one input channel)
/// into `pre` for every output channel.
fn conv_delta(pre: &mut [f64], delta: &[f64], i_in: usize, in_c: usize, size: usize, k: &[f64], out_c: usize) {
    let os = size / 2;
    for o in 0..out_c {
        for oy in 0..os {
            for ox in 0..os {
                let mut s = 0.0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (2 * oy + ky) as isize - 1;
                        let ix = (2 * ox + kx) as isize - 1;
                        if iy < 0 || ix < 0 || iy >= size as isize || ix >= size as isize {
                            continue;
                        }
                        s += k[((o * in_c + i_in) * 3 + ky) * 3 + kx] * delta[iy as usize * size + ix as usize];
                    }
                }
                pre[(o * os + oy) * os + ox] += s;
            }
        }
    }
}

/// Contribution of one kernel tap to its output channel, per output position.
fn tap(input: &[f64], i: usize, size: usize, ky: usize, kx: usize) -> Vec<f64> {
    let os = size / 2;
    let mut out = vec![0.0; os * os];
    for oy in 0..os {
        for ox in 0..os {
            let iy = (2 * oy + ky) as isize - 1;
            let ix = (2 * ox + kx) as isize - 1;
            if iy >= 0 && ix >= 0 && iy < size as isize && ix < size as isize {
                out[oy * os + ox] = input[(i * size + iy as usize) * size + ix as usize];
            }
        }
    }
    out
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

fn kinked(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).any(|(&x, &y)| (x > 0.0) != (y > 0.0))
}

impl Oracle {
    pub fn new(w: &Weights<f64>, x: &[f64], target: [f64; 2]) -> Self {
        let t = |i: usize| w.tensors[i].data.clone();
        let mut o = Self {
            k: [t(0), t(2), t(4)],
            b: [t(1), t(3), t(5)],
            fc_w: t(6),
            fc_b: t(7),
            x: x.to_vec(),
            target,
            pre: Default::default(),
        };
        o.refresh();
        o
    }

    fn refresh(&mut self) {
        let mut input = self.x.clone();
        for (l, &(ic, oc, s)) in C.iter().enumerate() {
            self.pre[l] = conv(&input, ic, s, &self.k[l], &self.b[l], oc);
            input = relu(&self.pre[l]);
        }
    }

    fn head(&self, pre3: &[f64]) -> [f64; 2] {
        let mut pooled = [0.0; 64];
        for (c, p) in pooled.iter_mut().enumerate() {
            *p = pre3[c * 64..(c + 1) * 64].iter().map(|&v| v.max(0.0)).sum::<f64>() / 64.0;
        }
        let mut y = [0.0; 2];
        for (k, yk) in y.iter_mut().enumerate() {
            *yk = self.fc_b[k] + (0..64).map(|j| self.fc_w[k * 64 + j] * pooled[j]).sum::<f64>();
        }
        y
    }

    pub fn output(&self) -> [f64; 2] {
        self.head(&self.pre[2])
    }

    fn loss_of(&self, y: [f64; 2]) -> f64 {
        let (a, b) = (y[0] - self.target[0], y[1] - self.target[1]);
        0.5 * (a * a + b * b)
    }

    pub fn loss(&self) -> f64 {
        self.loss_of(self.output())
    }

    /// Loss with parameter `idx` of tensor `t` (library layout order) moved
    /// by `d`, or `None` when the move flips a ReLU.
    fn perturbed_loss(&self, t: usize, idx: usize, d: f64) -> Option<f64> {
        if t >= 6 {
            let mut o = Oracle { fc_w: self.fc_w.clone(), fc_b: self.fc_b.clone(), ..self.shallow() };
            if t == 6 { o.fc_w[idx] += d } else { o.fc_b[idx] += d }
            return Some(o.loss_of(o.head(&self.pre[2])));
        }
        let l = t / 2;
        let (ic, _, s) = C[l];
        let os = s / 2;
        let input_l = if l == 0 { self.x.clone() } else { relu(&self.pre[l - 1]) };
        let (o, delta_pre) = if t % 2 == 1 {
            (idx, vec![d; os * os])
        } else {
            let o = idx / (ic * 9);
            let r = idx % (ic * 9);
            let v = tap(&input_l, r / 9, s, (r / 3) % 3, r % 3);
            (o, v.into_iter().map(|v| v * d).collect())
        };
        let old = &self.pre[l][o * os * os..(o + 1) * os * os];
        let new: Vec<f64> = old.iter().zip(&delta_pre).map(|(a, b)| a + b).collect();
        if kinked(old, &new) {
            return None;
        }
        let mut cur = self.pre[l].clone();
        cur[o * os * os..(o + 1) * os * os].copy_from_slice(&new);
        let mut changed_channel = Some(o);
        let mut prev_pre = self.pre[l].clone();
        for (m, &(mic, moc, ms)) in C.iter().enumerate().skip(l + 1) {
            let mut next = self.pre[m].clone();
            match changed_channel {
                Some(c) => {
                    let sz = ms * ms;
                    let da: Vec<f64> = (0..sz)
                        .map(|p| cur[c * sz + p].max(0.0) - prev_pre[c * sz + p].max(0.0))
                        .collect();
                    conv_delta(&mut next, &da, c, mic, ms, &self.k[m], moc);
                }
                None => next = conv(&relu(&cur), mic, ms, &self.k[m], &self.b[m], moc),
            }
            if kinked(&self.pre[m], &next) {
                return None;
            }
            prev_pre = self.pre[m].clone();
            cur = next;
            changed_channel = None;
        }
        Some(self.loss_of(self.head(&cur)))
    }

    fn shallow(&self) -> Oracle {
        Oracle {
            k: Default::default(),
            b: Default::default(),
            fc_w: Vec::new(),
            fc_b: Vec::new(),
            x: Vec::new(),
            target: self.target,
            pre: Default::default(),
        }
    }

    /// Central differences for every parameter, in library layout order.
    /// Entries are `None` where the perturbation crosses a ReLU kink.
    pub fn central_differences(&self, h: f64) -> Vec<Vec<Option<f64>>> {
        let lens = [
            self.k[0].len(), self.b[0].len(), self.k[1].len(), self.b[1].len(),
            self.k[2].len(), self.b[2].len(), self.fc_w.len(), self.fc_b.len(),
        ];
        lens.iter()
            .enumerate()
            .map(|(t, &n)| {
                (0..n)
                    .map(|i| {
                        let p = self.perturbed_loss(t, i, h)?;
                        let m = self.perturbed_loss(t, i, -h)?;
                        Some((p - m) / (2.0 * h))
                    })
                    .collect()
            })
            .collect()
    }
}

pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
}

/// Worst relative error between analytic gradients and central differences;
/// pairs where both magnitudes are below `floor` count as agreeing.
pub fn compare(analytic: &[Vec<f64>], numeric: &[Vec<Option<f64>>], floor: f64) -> GradCheck {
    let mut r = GradCheck { checked: 0, skipped: 0, worst: 0.0 };
    for (a, n) in analytic.iter().zip(numeric) {
        for (&a, &n) in a.iter().zip(n) {
            let Some(n) = n else {
                r.skipped += 1;
                continue;
            };
            r.checked += 1;
            let scale = a.abs().max(n.abs());
            if scale > floor {
                r.worst = r.worst.max((a - n).abs() / scale);
            }
        }
    }
    r
}
