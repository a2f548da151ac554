//! Reference computations written with plain loops over `f64` slices.
//! Nothing here calls into the library's numerics; library types only
//! carry the inputs in.

#![allow(dead_code)]

pub struct DomainData {
    /// Online embeddings, one row per sample.
    pub online: Vec<Vec<f64>>,
    /// Momentum embeddings.
    pub momentum: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Instance negatives: batch positions.
    pub instance_negatives: Vec<Vec<usize>>,
    /// Own-domain negative prototypes.
    pub own_negatives: Vec<Vec<usize>>,
    /// Other-domain negative prototypes.
    pub cross_negatives: Vec<Vec<usize>>,
    /// Raw centroids of this domain's single clustering round.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
}

pub struct OracleInput {
    pub source: DomainData,
    pub target: DomainData,
    pub inv_temperature: f64,
    /// `[w1 (d x h), b1 (h), w2 (h x 2), b2 (2)]`, row-major.
    pub classifier: [Vec<f64>; 4],
    pub hidden: usize,
    pub tau_prime: f64,
    pub alpha: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleLosses {
    pub info_nce_target: f64,
    pub info_nce_source: f64,
    pub proto_target: f64,
    pub proto_source: f64,
    pub l_target: f64,
    pub l_source: f64,
    pub l_intra: f64,
    pub l_s2t: f64,
    pub l_t2s: f64,
    pub l_inter: f64,
    pub l_dual: f64,
    pub l_t: f64,
    pub l_s: f64,
    pub total: f64,
}

impl OracleLosses {
    pub fn values(&self) -> [f64; 14] {
        [
            self.info_nce_target,
            self.info_nce_source,
            self.proto_target,
            self.proto_source,
            self.l_target,
            self.l_source,
            self.l_intra,
            self.l_s2t,
            self.l_t2s,
            self.l_inter,
            self.l_dual,
            self.l_t,
            self.l_s,
            self.total,
        ]
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let mut sq = 0.0;
    for x in v {
        sq += x * x;
    }
    let n = sq.sqrt();
    v.iter().map(|x| x / n).collect()
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

/// `-log(exp(z_0) / Σ_j exp(z_j))`.
fn neg_log_first(z: &[f64]) -> f64 {
    let mut top = z[0];
    for &v in z {
        if v > top {
            top = v;
        }
    }
    let mut s = 0.0;
    for &v in z {
        s += (v - top).exp();
    }
    top + s.ln() - z[0]
}

/// Concentration per cluster, singletons borrowing the loosest multi-member
/// cluster's value, rescaled to mean `tau_prime`.
pub fn concentrations(points: &[Vec<f64>], centroids: &[Vec<f64>], assign: &[usize], alpha: f64, tau_prime: f64) -> Vec<f64> {
    let k = centroids.len();
    let mut total = vec![0.0; k];
    let mut count = vec![0usize; k];
    for i in 0..points.len() {
        total[assign[i]] += dist(&points[i], &centroids[assign[i]]);
        count[assign[i]] += 1;
    }
    let mut raw = vec![0.0; k];
    let mut loosest: f64 = 0.0;
    for j in 0..k {
        let c = count[j] as f64;
        raw[j] = total[j] / (c * (c + alpha).ln());
        if count[j] > 1 && raw[j] > loosest {
            loosest = raw[j];
        }
    }
    for j in 0..k {
        if count[j] == 1 {
            raw[j] = loosest;
        }
        if raw[j] < 1e-8 {
            raw[j] = 1e-8;
        }
    }
    let mean = raw.iter().sum::<f64>() / k as f64;
    raw.iter().map(|r| r * tau_prime / mean).collect()
}

fn closest(point: &[f64], protos: &[Vec<f64>]) -> usize {
    let mut best = 0;
    for j in 1..protos.len() {
        if inner(point, &protos[j]) > inner(point, &protos[best]) {
            best = j;
        }
    }
    best
}

fn class_logits(inp: &OracleInput, x: &[f64]) -> [f64; 2] {
    let [w1, b1, w2, b2] = &inp.classifier;
    let (d, h) = (x.len(), inp.hidden);
    let mut hid = vec![0.0; h];
    for j in 0..h {
        let mut s = b1[j];
        for i in 0..d {
            s += x[i] * w1[i * h + j];
        }
        hid[j] = s.tanh();
    }
    let mut out = [b2[0], b2[1]];
    for c in 0..2 {
        for j in 0..h {
            out[c] += hid[j] * w2[j * 2 + c];
        }
    }
    out
}

fn ce(inp: &OracleInput, x: &[f64], label: usize) -> f64 {
    let z = class_logits(inp, x);
    let (a, b) = (z[label], z[1 - label]);
    neg_log_first(&[a, b])
}

struct Protos {
    unit: Vec<Vec<f64>>,
    phi: Vec<f64>,
    raw: Vec<Vec<f64>>,
}

fn protos_of(inp: &OracleInput, dom: &DomainData) -> Protos {
    let points: Vec<Vec<f64>> = dom.momentum.iter().map(|m| unit(m)).collect();
    Protos {
        unit: dom.centroids.iter().map(|c| unit(c)).collect(),
        phi: concentrations(&points, &dom.centroids, &dom.assignments, inp.alpha, inp.tau_prime),
        raw: dom.centroids.clone(),
    }
}

/// Sum over the domain's samples of the prototype term against `p`.
fn proto_sum(dom: &DomainData, p: &Protos, negatives: &[Vec<usize>]) -> f64 {
    let mut s = 0.0;
    for i in 0..dom.online.len() {
        let a = unit(&dom.online[i]);
        let key = unit(&dom.momentum[i]);
        let pos = closest(&key, &p.unit);
        let mut z = vec![inner(&a, &p.unit[pos]) / p.phi[pos]];
        for &j in &negatives[i] {
            z.push(inner(&a, &p.unit[j]) / p.phi[j]);
        }
        s += neg_log_first(&z);
    }
    s
}

fn info_sum(inp: &OracleInput, dom: &DomainData) -> f64 {
    let mut s = 0.0;
    for i in 0..dom.online.len() {
        let a = unit(&dom.online[i]);
        let mut z = vec![inp.inv_temperature * inner(&a, &unit(&dom.momentum[i]))];
        for &j in &dom.instance_negatives[i] {
            z.push(inp.inv_temperature * inner(&a, &unit(&dom.momentum[j])));
        }
        s += neg_log_first(&z);
    }
    s
}

fn classification(inp: &OracleInput, dom: &DomainData, own: &Protos) -> f64 {
    let mut s = 0.0;
    for i in 0..dom.online.len() {
        s += ce(inp, &dom.online[i], dom.labels[i]);
        let pos = closest(&unit(&dom.momentum[i]), &own.unit);
        s += ce(inp, &own.raw[pos], dom.labels[i]);
    }
    s / dom.online.len() as f64
}

/// Every loss of the objective for a single clustering round.
pub fn oracle_losses(inp: &OracleInput) -> OracleLosses {
    let ps = protos_of(inp, &inp.source);
    let pt = protos_of(inp, &inp.target);
    let (t, s) = (&inp.target, &inp.source);
    let nt = t.online.len() as f64;
    let ns = s.online.len() as f64;

    let info_nce_target = info_sum(inp, t) / nt;
    let info_nce_source = info_sum(inp, s) / ns;
    let proto_target = proto_sum(t, &pt, &t.own_negatives) / nt;
    let proto_source = proto_sum(s, &ps, &s.own_negatives) / ns;
    let l_target = (info_sum(inp, t) + proto_sum(t, &pt, &t.own_negatives)) / nt;
    let l_source = (info_sum(inp, s) + proto_sum(s, &ps, &s.own_negatives)) / ns;
    let l_s2t = proto_sum(s, &pt, &s.cross_negatives) / ns;
    let l_t2s = proto_sum(t, &ps, &t.cross_negatives) / nt;
    let l_intra = l_target + l_source;
    let l_inter = l_s2t + l_t2s;
    let l_dual = l_intra + l_inter;
    let l_t = classification(inp, t, &pt);
    let l_s = classification(inp, s, &ps);
    OracleLosses {
        info_nce_target,
        info_nce_source,
        proto_target,
        proto_source,
        l_target,
        l_source,
        l_intra,
        l_s2t,
        l_t2s,
        l_inter,
        l_dual,
        l_t,
        l_s,
        total: inp.lambda * l_dual + l_t + l_s,
    }
}

/// Exhaustive k-means: the partition of `points` into `k` non-empty groups
/// with the smallest sum of squared distances to group means.
pub fn brute_force_kmeans(points: &[Vec<f64>], k: usize) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut best = (Vec::new(), f64::INFINITY);
    let mut labels = vec![0usize; n];
    loop {
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        if counts.iter().all(|&c| c > 0) {
            let d = points[0].len();
            let mut means = vec![vec![0.0; d]; k];
            for (p, &l) in points.iter().zip(&labels) {
                for i in 0..d {
                    means[l][i] += p[i] / counts[l] as f64;
                }
            }
            let mut obj = 0.0;
            for (p, &l) in points.iter().zip(&labels) {
                obj += dist(p, &means[l]).powi(2);
            }
            if obj < best.1 {
                best = (labels.clone(), obj);
            }
        }
        // Next labelling in base k.
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

/// Same partition up to relabelling.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len()
        && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

/// Copies a single-round toy instance's data out of library types.
pub fn oracle_input(toy: &pctl::verify::toy::ToyInstance) -> OracleInput {
    use pctl::encoder::Domain;
    let p = &toy.params;
    assert_eq!(p.k_schedule.len(), 1, "oracle covers one clustering round");
    let x = toy.point.data();
    let (n, d, h) = (p.n, p.d, p.classifier_hidden);
    let rows = |flat: &[f64]| flat.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let mut off = 2 * n * d;
    let inv_temperature = x[off];
    off += 1;
    let mut take = |len: usize| {
        let v = x[off..off + len].to_vec();
        off += len;
        v
    };
    let classifier = [take(d * h), take(h), take(h * 2), take(2)];
    let half = |half: &pctl::verify::toy::ToyHalf, online: Vec<Vec<f64>>| {
        let round = toy.bank.round(half.domain, 0);
        DomainData {
            online,
            momentum: half.momentum.rows().map(<[f64]>::to_vec).collect(),
            labels: half.labels.clone(),
            instance_negatives: half.negatives.iter().map(|s| s.instance.clone()).collect(),
            own_negatives: half.negatives.iter().map(|s| s.own[0].clone()).collect(),
            cross_negatives: half.negatives.iter().map(|s| s.cross[0].clone()).collect(),
            centroids: round.centroids.rows().map(<[f64]>::to_vec).collect(),
            assignments: round.assignments.clone(),
        }
    };
    assert_eq!(toy.source.domain, Domain::Source);
    OracleInput {
        source: half(&toy.source, rows(&x[..n * d])),
        target: half(&toy.target, rows(&x[n * d..2 * n * d])),
        inv_temperature,
        classifier,
        hidden: h,
        tau_prime: p.tau_prime,
        alpha: p.alpha,
        lambda: p.lambda,
    }
}
