//! Bit-parallel Pauli-frame propagation, 64 shots per machine word.
//!
//! Each block of 64 shots draws its noise from a ChaCha8 stream selected by
//! the block index, so output depends only on `(circuit, shots, seed)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Circuit, Instruction, Pauli, SyndromeBatch};

/// Deterministic error applied right after instruction `after`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Injection {
    pub after: usize,
    pub qubit: usize,
    pub kind: InjectionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionKind {
    Pauli(Pauli),
    /// Flips the next recorded outcome of the qubit.
    RecordFlip,
}

struct Frame {
    x: Vec<u64>,
    z: Vec<u64>,
    flip: Vec<u64>,
    records: Vec<u64>,
    detectors: Vec<(usize, u64)>,
    observables: Vec<u64>,
}

impl Frame {
    fn new(circuit: &Circuit) -> Self {
        let n = circuit.num_qubits;
        Self {
            x: vec![0; n],
            z: vec![0; n],
            flip: vec![0; n],
            records: Vec::with_capacity(circuit.num_measurements()),
            detectors: Vec::with_capacity(circuit.num_detectors()),
            observables: vec![0; circuit.num_observables],
        }
    }

    fn parity(&self, lookback: &[usize]) -> u64 {
        let len = self.records.len();
        lookback.iter().fold(0, |acc, &k| acc ^ self.records[len - k])
    }

    fn apply(&mut self, q: usize, kind: InjectionKind, mask: u64) {
        match kind {
            InjectionKind::Pauli(p) => {
                if p.has_x() {
                    self.x[q] ^= mask;
                }
                if p.has_z() {
                    self.z[q] ^= mask;
                }
            }
            InjectionKind::RecordFlip => self.flip[q] ^= mask,
        }
    }

    fn step(&mut self, op: &Instruction, checks: usize, rng: Option<&mut ChaCha8Rng>) {
        match op {
            Instruction::Reset(t) => {
                for &q in t {
                    self.x[q] = 0;
                    self.z[q] = 0;
                    self.flip[q] = 0;
                }
            }
            Instruction::Hadamard(t) => {
                for &q in t {
                    std::mem::swap(&mut self.x[q], &mut self.z[q]);
                }
            }
            Instruction::ControlledX(pairs) => {
                for &(c, t) in pairs {
                    self.x[t] ^= self.x[c];
                    self.z[c] ^= self.z[t];
                }
            }
            Instruction::MeasureZ(t) => {
                for &q in t {
                    self.records.push(self.x[q] ^ self.flip[q]);
                    self.flip[q] = 0;
                }
            }
            Instruction::Detector { round, check, lookback } => {
                let v = self.parity(lookback);
                self.detectors.push((round * checks + check, v));
            }
            Instruction::ObservableInclude { id, lookback } => {
                self.observables[*id] ^= self.parity(lookback);
            }
            noise => {
                if let Some(rng) = rng {
                    self.noise(noise, rng);
                }
            }
        }
    }

    fn noise(&mut self, op: &Instruction, rng: &mut ChaCha8Rng) {
        match op {
            Instruction::Depolarize1(p, t) => {
                let thr = threshold(*p);
                for &q in t {
                    let (mx, mz) = depolarize1_masks(rng, thr);
                    self.x[q] ^= mx;
                    self.z[q] ^= mz;
                }
            }
            Instruction::Depolarize2(p, pairs) => {
                let thr = threshold(*p);
                for &(a, b) in pairs {
                    let [xa, za, xb, zb] = depolarize2_masks(rng, thr);
                    self.x[a] ^= xa;
                    self.z[a] ^= za;
                    self.x[b] ^= xb;
                    self.z[b] ^= zb;
                }
            }
            Instruction::FlipX(p, t) => {
                let thr = threshold(*p);
                for &q in t {
                    self.x[q] ^= bernoulli_mask(rng, thr);
                }
            }
            Instruction::FlipZ(p, t) => {
                let thr = threshold(*p);
                for &q in t {
                    self.z[q] ^= bernoulli_mask(rng, thr);
                }
            }
            Instruction::MeasureNoise(p, t) => {
                let thr = threshold(*p);
                for &q in t {
                    self.flip[q] ^= bernoulli_mask(rng, thr);
                }
            }
            _ => unreachable!("not a noise channel"),
        }
    }
}

/// Event threshold on a uniform `u64`; `None` means probability one.
fn threshold(p: f64) -> Option<u64> {
    if p >= 1.0 {
        None
    } else {
        Some((p * 18_446_744_073_709_551_616.0) as u64)
    }
}

fn hit(rng: &mut ChaCha8Rng, thr: Option<u64>) -> Option<u64> {
    let u = rng.next_u64();
    match thr {
        None => Some(u),
        Some(0) => None,
        Some(t) if u < t => Some(u),
        Some(_) => None,
    }
}

/// Uniform index in `0..k` derived from an accepted draw.
fn pick(u: u64, thr: Option<u64>, k: u64) -> u64 {
    let span = thr.map_or(u128::from(u64::MAX) + 1, u128::from);
    ((u128::from(u) * u128::from(k)) / span) as u64
}

fn bernoulli_mask(rng: &mut ChaCha8Rng, thr: Option<u64>) -> u64 {
    if thr == Some(0) {
        return 0;
    }
    let mut m = 0;
    for s in 0..64 {
        if hit(rng, thr).is_some() {
            m |= 1 << s;
        }
    }
    m
}

fn depolarize1_masks(rng: &mut ChaCha8Rng, thr: Option<u64>) -> (u64, u64) {
    if thr == Some(0) {
        return (0, 0);
    }
    let (mut mx, mut mz) = (0, 0);
    for s in 0..64 {
        if let Some(u) = hit(rng, thr) {
            // 0 = X, 1 = Y, 2 = Z
            let k = pick(u, thr, 3);
            if k <= 1 {
                mx |= 1 << s;
            }
            if k >= 1 {
                mz |= 1 << s;
            }
        }
    }
    (mx, mz)
}

fn depolarize2_masks(rng: &mut ChaCha8Rng, thr: Option<u64>) -> [u64; 4] {
    let mut out = [0u64; 4];
    if thr == Some(0) {
        return out;
    }
    for s in 0..64 {
        if let Some(u) = hit(rng, thr) {
            // Bits of 1..=15 select (xa, za, xb, zb).
            let k = pick(u, thr, 15) + 1;
            for (b, word) in out.iter_mut().enumerate() {
                if k >> b & 1 == 1 {
                    *word |= 1 << s;
                }
            }
        }
    }
    out
}

fn run_block(circuit: &Circuit, rng: Option<&mut ChaCha8Rng>, injections: &[Injection]) -> Frame {
    let mut frame = Frame::new(circuit);
    let checks = circuit.checks_per_round;
    let mut rng = rng;
    for (i, op) in circuit.ops.iter().enumerate() {
        frame.step(op, checks, rng.as_deref_mut());
        for inj in injections.iter().filter(|inj| inj.after == i) {
            frame.apply(inj.qubit, inj.kind, 1);
        }
    }
    frame
}

/// Samples `shots` noisy executions of the circuit.
pub fn sample(circuit: &Circuit, shots: usize, seed: u64) -> SyndromeBatch {
    assert!(shots >= 1, "need at least one shot");
    let blocks = shots.div_ceil(64);
    let frames: Vec<Frame> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            run_block(circuit, Some(&mut rng), &[])
        })
        .collect();
    let mut batch = SyndromeBatch::zeros(shots, circuit.rounds(), circuit.checks_per_round, circuit.num_observables);
    for (b, frame) in frames.iter().enumerate() {
        let valid = (shots - b * 64).min(64);
        let mask = if valid == 64 { u64::MAX } else { (1u64 << valid) - 1 };
        for &(pos, word) in &frame.detectors {
            let mut w = word & mask;
            while w != 0 {
                let s = w.trailing_zeros() as usize;
                batch.toggle_detection_at(b * 64 + s, pos);
                w &= w - 1;
            }
        }
        for (o, &word) in frame.observables.iter().enumerate() {
            let mut w = word & mask;
            while w != 0 {
                let s = w.trailing_zeros() as usize;
                batch.toggle_label(b * 64 + s, o);
                w &= w - 1;
            }
        }
    }
    batch
}

/// Noise-free propagation of deterministic errors: returns the dense
/// `R × checks` detection pattern and the observable flips.
pub fn propagate(circuit: &Circuit, injections: &[Injection]) -> (Vec<bool>, Vec<bool>) {
    let frame = run_block(circuit, None, injections);
    let mut dets = vec![false; circuit.rounds() * circuit.checks_per_round];
    for &(pos, word) in &frame.detectors {
        dets[pos] ^= word & 1 == 1;
    }
    let obs = frame.observables.iter().map(|w| w & 1 == 1).collect();
    (dets, obs)
}

/// One elementary fault of a noise channel with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub injections: Vec<Injection>,
    pub probability: f64,
}

/// Enumerates every elementary fault of every noise channel: the three
/// Paulis of `Depolarize1`, the fifteen of `Depolarize2`, and the single
/// event of the flip channels.
pub fn fault_locations(circuit: &Circuit) -> Vec<Fault> {
    let mut out = Vec::new();
    let single = |after, qubit, kind| Injection { after, qubit, kind };
    for (i, op) in circuit.ops.iter().enumerate() {
        match op {
            Instruction::Depolarize1(p, t) if *p > 0.0 => {
                for &q in t {
                    for pauli in Pauli::ALL {
                        out.push(Fault {
                            injections: vec![single(i, q, InjectionKind::Pauli(pauli))],
                            probability: p / 3.0,
                        });
                    }
                }
            }
            Instruction::Depolarize2(p, pairs) if *p > 0.0 => {
                let paulis = [None, Some(Pauli::X), Some(Pauli::Y), Some(Pauli::Z)];
                for &(a, b) in pairs {
                    for (ia, pa) in paulis.iter().enumerate() {
                        for (ib, pb) in paulis.iter().enumerate() {
                            if ia == 0 && ib == 0 {
                                continue;
                            }
                            let mut injections = Vec::new();
                            if let Some(pa) = pa {
                                injections.push(single(i, a, InjectionKind::Pauli(*pa)));
                            }
                            if let Some(pb) = pb {
                                injections.push(single(i, b, InjectionKind::Pauli(*pb)));
                            }
                            out.push(Fault { injections, probability: p / 15.0 });
                        }
                    }
                }
            }
            Instruction::FlipX(p, t) | Instruction::FlipZ(p, t) | Instruction::MeasureNoise(p, t) if *p > 0.0 => {
                let kind = match op {
                    Instruction::FlipX(..) => InjectionKind::Pauli(Pauli::X),
                    Instruction::FlipZ(..) => InjectionKind::Pauli(Pauli::Z),
                    _ => InjectionKind::RecordFlip,
                };
                for &q in t {
                    out.push(Fault { injections: vec![single(i, q, kind)], probability: *p });
                }
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::codes::CssCode;
    use crate::sim::{build_memory_circuit, Basis, NoiseModel};

    fn circuit(noise: NoiseModel) -> Circuit {
        let code = CssCode::preset("surface:3").unwrap();
        build_memory_circuit(&code, 3, Basis::Z, &noise).unwrap()
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let c = circuit(NoiseModel::data_level(0.1));
        let a = sample(&c, 1000, 11);
        assert_eq!(a, sample(&c, 1000, 11));
        assert_ne!(a, sample(&c, 1000, 12));
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let c = circuit(NoiseModel::circuit_level(0.01));
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sample(&c, 700, 3))
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn prefix_of_larger_sample_matches() {
        let c = circuit(NoiseModel::data_level(0.05));
        let big = sample(&c, 300, 9);
        assert_eq!(big.slice(0, 130), sample(&c, 130, 9));
    }

    #[test]
    fn certain_noise_is_applied_every_shot() {
        let mut c = Circuit::new(1, 1, 0);
        c.mark_round();
        c.push(Instruction::Reset(vec![0]));
        c.push(Instruction::FlipX(1.0, vec![0]));
        c.push(Instruction::MeasureZ(vec![0]));
        c.push(Instruction::Detector { round: 0, check: 0, lookback: vec![1] });
        let b = sample(&c, 100, 0);
        assert_eq!(b.count_detections(), 100);
    }

    #[test]
    fn depolarize1_components_are_balanced() {
        let mut c = Circuit::new(1, 2, 0);
        c.mark_round();
        c.push(Instruction::Reset(vec![0]));
        c.push(Instruction::Depolarize1(0.3, vec![0]));
        c.push(Instruction::MeasureZ(vec![0]));
        c.push(Instruction::Detector { round: 0, check: 0, lookback: vec![1] });
        c.push(Instruction::Hadamard(vec![0]));
        c.push(Instruction::MeasureZ(vec![0]));
        c.push(Instruction::Detector { round: 0, check: 1, lookback: vec![1] });
        let n = 200_000;
        let b = sample(&c, n, 4);
        // X or Y flips Z-readout: 2p/3; Z or Y flips X-readout: 2p/3.
        for check in 0..2 {
            let rate = (0..n).filter(|&s| b.detection(s, 0, check)).count() as f64 / n as f64;
            let sigma = (0.2f64 * 0.8 / n as f64).sqrt();
            assert!((rate - 0.2).abs() < 4.0 * sigma, "check {check}: {rate}");
        }
    }

    fn injection_strategy(c: &Circuit) -> impl Strategy<Value = Injection> {
        let ops = c.ops.len();
        let qubits = c.num_qubits;
        (0..ops, 0..qubits, 0..4usize).prop_map(|(after, qubit, k)| Injection {
            after,
            qubit,
            kind: match k {
                0 => InjectionKind::Pauli(Pauli::X),
                1 => InjectionKind::Pauli(Pauli::Y),
                2 => InjectionKind::Pauli(Pauli::Z),
                _ => InjectionKind::RecordFlip,
            },
        })
    }

    proptest! {
        #[test]
        fn frame_is_linear(
            (a, b) in {
                let c = circuit(NoiseModel::circuit_level(0.0));
                (injection_strategy(&c), injection_strategy(&c))
            }
        ) {
            let c = circuit(NoiseModel::circuit_level(0.0));
            let (da, oa) = propagate(&c, &[a]);
            let (db, ob) = propagate(&c, &[b]);
            let (dab, oab) = propagate(&c, &[a, b]);
            let xd: Vec<bool> = da.iter().zip(&db).map(|(x, y)| x ^ y).collect();
            let xo: Vec<bool> = oa.iter().zip(&ob).map(|(x, y)| x ^ y).collect();
            prop_assert_eq!(dab, xd);
            prop_assert_eq!(oab, xo);
        }

        #[test]
        fn errors_never_reach_back_in_time(
            round in 0usize..4,
            qubit in 0usize..9,
            k in 0usize..3,
        ) {
            let code = CssCode::preset("surface:3").unwrap();
            let c = build_memory_circuit(&code, 4, Basis::Z, &NoiseModel::data_level(0.0)).unwrap();
            let inj = Injection {
                after: c.round_markers[round],
                qubit,
                kind: InjectionKind::Pauli(Pauli::ALL[k]),
            };
            let (dets, _) = propagate(&c, &[inj]);
            let per = c.checks_per_round;
            prop_assert!(dets[..round * per].iter().all(|&b| !b));
            // Data-level noise is caught in the round it occurs.
            prop_assert!(dets[(round + 1) * per..].iter().all(|&b| !b));
        }
    }
}
