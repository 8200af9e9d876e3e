use std::collections::BTreeSet;

use super::{Basis, Circuit, Instruction, NoiseKind, NoiseModel, SimError};
use crate::codes::{CheckType, CssCode, Layout};

/// CX layers for circuit-level extraction: each layer is a list of
/// `(global check index, data qubit)` interactions, with every qubit and
/// every check used at most once per layer.
///
/// Surface codes use the interleaved four-step order: X checks visit
/// NW, NE, SW, SE and Z checks NW, SW, NE, SE, so hook errors run
/// perpendicular to the logical of the same type. Bivariate bicycle codes use
/// a greedy layering of all X-check interactions followed by all Z-check
/// interactions.
pub fn extraction_schedule(code: &CssCode) -> Result<Vec<Vec<(usize, usize)>>, SimError> {
    let known = code.name.starts_with("surface:") || code.name.starts_with("bb");
    if !known {
        return Err(SimError::NoSchedule(code.name.clone()));
    }
    match &code.layout {
        Layout::Grid(grid) => {
            let d = grid.d;
            let mut layers = vec![Vec::new(); 4];
            for (idx, check) in grid.checks.iter().enumerate() {
                let (i, j) = (check.row as i64, check.col as i64);
                let nw = (i - 1, j - 1);
                let ne = (i - 1, j);
                let sw = (i, j - 1);
                let se = (i, j);
                let order = match check.kind {
                    CheckType::X => [nw, ne, sw, se],
                    CheckType::Z => [nw, sw, ne, se],
                };
                for (step, (r, c)) in order.into_iter().enumerate() {
                    if (0..d as i64).contains(&r) && (0..d as i64).contains(&c) {
                        layers[step].push((idx, r as usize * d + c as usize));
                    }
                }
            }
            Ok(layers)
        }
        Layout::Torus(_) => {
            let mut layers = greedy_layers(code, CheckType::X);
            layers.extend(greedy_layers(code, CheckType::Z));
            Ok(layers)
        }
    }
}

fn greedy_layers(code: &CssCode, kind: CheckType) -> Vec<Vec<(usize, usize)>> {
    let mut layers: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut used_checks: Vec<BTreeSet<usize>> = Vec::new();
    let mut used_qubits: Vec<BTreeSet<usize>> = Vec::new();
    let h = code.checks_of(kind);
    for i in 0..h.rows() {
        let check = code.check_index(kind, i);
        for q in h.row_support(i) {
            let slot = (0..layers.len())
                .find(|&l| !used_checks[l].contains(&check) && !used_qubits[l].contains(&q))
                .unwrap_or_else(|| {
                    layers.push(Vec::new());
                    used_checks.push(BTreeSet::new());
                    used_qubits.push(BTreeSet::new());
                    layers.len() - 1
                });
            layers[slot].push((check, q));
            used_checks[slot].insert(check);
            used_qubits[slot].insert(q);
        }
    }
    layers
}

struct Builder<'a> {
    circuit: Circuit,
    code: &'a CssCode,
    noise: NoiseModel,
    measured: usize,
}

impl Builder<'_> {
    fn ancilla(&self, check: usize) -> usize {
        self.code.n + check
    }

    fn all_qubits(&self) -> Vec<usize> {
        (0..self.circuit.num_qubits).collect()
    }

    fn depolarize_idle(&mut self, active: &BTreeSet<usize>) {
        if self.noise.kind != NoiseKind::CircuitLevel {
            return;
        }
        let idle: Vec<usize> = self.all_qubits().into_iter().filter(|q| !active.contains(q)).collect();
        if !idle.is_empty() {
            self.circuit.push(Instruction::Depolarize1(self.noise.p, idle));
        }
    }

    fn measure(&mut self, qubits: Vec<usize>) -> Vec<usize> {
        let start = self.measured;
        self.measured += qubits.len();
        self.circuit.push(Instruction::MeasureZ(qubits.clone()));
        (start..self.measured).collect()
    }

    /// Returns absolute measurement indices per global check.
    fn extraction_round(&mut self, schedule: &[Vec<(usize, usize)>]) -> Vec<usize> {
        let code = self.code;
        let checks = code.num_checks();
        let ancillas: Vec<usize> = (0..checks).map(|c| self.ancilla(c)).collect();
        let x_ancillas: Vec<usize> = (0..code.num_x_checks()).map(|c| self.ancilla(c)).collect();
        let p = self.noise.p;
        match self.noise.kind {
            NoiseKind::DataLevel | NoiseKind::Phenomenological => {
                self.circuit.push(Instruction::Depolarize1(p, (0..code.n).collect()));
                self.circuit.push(Instruction::Reset(ancillas.clone()));
                self.circuit.push(Instruction::Hadamard(x_ancillas.clone()));
                let mut pairs = Vec::new();
                for c in 0..checks {
                    let (kind, support) = code.check(c);
                    let a = self.ancilla(c);
                    for q in support {
                        pairs.push(match kind {
                            CheckType::X => (a, q),
                            CheckType::Z => (q, a),
                        });
                    }
                }
                self.circuit.push(Instruction::ControlledX(pairs));
                self.circuit.push(Instruction::Hadamard(x_ancillas));
                if self.noise.kind == NoiseKind::Phenomenological {
                    self.circuit.push(Instruction::MeasureNoise(self.noise.q, ancillas.clone()));
                }
            }
            NoiseKind::CircuitLevel => {
                self.circuit.push(Instruction::Reset(ancillas.clone()));
                self.circuit.push(Instruction::Depolarize1(p, ancillas.clone()));
                self.depolarize_idle(&ancillas.iter().copied().collect());
                self.circuit.push(Instruction::Hadamard(x_ancillas.clone()));
                self.circuit.push(Instruction::Depolarize1(p, x_ancillas.clone()));
                self.depolarize_idle(&x_ancillas.iter().copied().collect());
                for layer in schedule {
                    let pairs: Vec<(usize, usize)> = layer
                        .iter()
                        .map(|&(c, q)| match code.check(c).0 {
                            CheckType::X => (self.ancilla(c), q),
                            CheckType::Z => (q, self.ancilla(c)),
                        })
                        .collect();
                    let active = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
                    self.circuit.push(Instruction::ControlledX(pairs.clone()));
                    self.circuit.push(Instruction::Depolarize2(p, pairs));
                    self.depolarize_idle(&active);
                }
                self.circuit.push(Instruction::Hadamard(x_ancillas.clone()));
                self.circuit.push(Instruction::Depolarize1(p, x_ancillas.clone()));
                self.depolarize_idle(&x_ancillas.iter().copied().collect());
                self.circuit.push(Instruction::MeasureNoise(p, ancillas.clone()));
                self.depolarize_idle(&ancillas.iter().copied().collect());
            }
        }
        self.measure(ancillas)
    }

    fn lookback(&self, records: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut out: Vec<usize> = records.into_iter().map(|m| self.measured - m).collect();
        out.sort_unstable();
        out
    }
}

fn toggle(set: &mut BTreeSet<usize>, v: usize) {
    if !set.insert(v) {
        set.remove(&v);
    }
}

/// Memory experiment: prepare the `basis` eigenstate, run `rounds` syndrome
/// rounds, measure every data qubit in `basis`.
///
/// Detector `(r, c)` compares round `r` with round `r - 1`; in round 0 only
/// checks of the basis type are deterministic and get a detector. The final
/// data measurement is folded into round `R - 1` of the basis-type checks,
/// so the detector grid has exactly `R` slices. One observable per logical of
/// the basis type.
pub fn build_memory_circuit(
    code: &CssCode,
    rounds: usize,
    basis: Basis,
    noise: &NoiseModel,
) -> Result<Circuit, SimError> {
    if rounds == 0 {
        return Err(SimError::NoRounds);
    }
    noise.validate()?;
    let schedule = match noise.kind {
        NoiseKind::CircuitLevel => extraction_schedule(code)?,
        _ => Vec::new(),
    };
    let checks = code.num_checks();
    let logicals = code.logicals_of(basis);
    let mut b = Builder {
        circuit: Circuit::new(code.n + checks, checks, logicals.rows()),
        code,
        noise: *noise,
        measured: 0,
    };
    let data: Vec<usize> = (0..code.n).collect();
    b.circuit.push(Instruction::Reset(data.clone()));
    if basis == Basis::X {
        b.circuit.push(Instruction::Hadamard(data.clone()));
    }

    let mut history: Vec<Vec<usize>> = Vec::with_capacity(rounds);
    for r in 0..rounds {
        b.circuit.mark_round();
        let current = b.extraction_round(&schedule);
        for c in 0..checks {
            let is_basis = code.check(c).0 == basis;
            if r + 1 == rounds && is_basis {
                continue;
            }
            let records: Vec<usize> = match history.last() {
                None if is_basis => vec![current[c]],
                None => continue,
                Some(prev) => vec![current[c], prev[c]],
            };
            let lookback = b.lookback(records);
            b.circuit.push(Instruction::Detector { round: r, check: c, lookback });
        }
        history.push(current);
    }

    if basis == Basis::X {
        b.circuit.push(Instruction::Hadamard(data.clone()));
    }
    if noise.kind == NoiseKind::CircuitLevel {
        b.circuit.push(Instruction::MeasureNoise(noise.p, data.clone()));
    }
    let data_records = b.measure(data);

    // Folded final detectors: (last ⊕ earlier) ⊕ (data parity ⊕ last).
    let h = code.checks_of(basis);
    for i in 0..h.rows() {
        let c = code.check_index(basis, i);
        let mut set = BTreeSet::new();
        toggle(&mut set, history[rounds - 1][c]);
        if rounds >= 2 {
            toggle(&mut set, history[rounds - 2][c]);
        }
        toggle(&mut set, history[rounds - 1][c]);
        for q in h.row_support(i) {
            toggle(&mut set, data_records[q]);
        }
        let lookback = b.lookback(set);
        b.circuit.push(Instruction::Detector { round: rounds - 1, check: c, lookback });
    }
    for o in 0..logicals.rows() {
        let lookback = b.lookback(logicals.row_support(o).into_iter().map(|q| data_records[q]));
        b.circuit.push(Instruction::ObservableInclude { id: o, lookback });
    }
    b.circuit.validate()?;
    Ok(b.circuit)
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::codes::BbPreset;
    use crate::sim::{fault_locations, propagate, sample, Injection, InjectionKind, Pauli};

    fn surface(d: usize) -> CssCode {
        CssCode::preset(&format!("surface:{d}")).unwrap()
    }

    #[test]
    fn noiseless_circuit_has_quiet_detectors() {
        for noise in [NoiseModel::data_level(0.0), NoiseModel::circuit_level(0.0)] {
            for basis in [Basis::X, Basis::Z] {
                let c = build_memory_circuit(&surface(3), 3, basis, &noise).unwrap();
                let batch = sample(&c, 200, 5);
                assert_eq!(batch.count_detections(), 0);
                assert!((0..200).all(|s| !batch.label(s, 0)));
            }
        }
    }

    #[test]
    fn detector_grid_counts() {
        let code = surface(3);
        let c = build_memory_circuit(&code, 3, Basis::Z, &NoiseModel::data_level(0.1)).unwrap();
        // Round 0: 4 Z checks; rounds 1-2: all 8 checks.
        assert_eq!(c.num_detectors(), 4 + 8 + 8);
        assert_eq!(c.rounds(), 3);
        let bb = BbPreset::Bb144.build().unwrap();
        let c = build_memory_circuit(&bb, 12, Basis::Z, &NoiseModel::phenomenological(0.01, 0.01)).unwrap();
        let observables = c
            .ops
            .iter()
            .filter(|op| matches!(op, Instruction::ObservableInclude { .. }))
            .count();
        assert_eq!(observables, 12);
    }

    #[test]
    fn bulk_x_error_fires_two_z_detectors() {
        let code = surface(3);
        // Hand trace: the centre qubit (1, 1) belongs to Z plaquettes at
        // cells (1, 2) and (2, 1).
        let grid = match &code.layout {
            Layout::Grid(g) => g.clone(),
            _ => unreachable!(),
        };
        let expected: BTreeSet<usize> = grid
            .checks
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!((c.row, c.col), (1, 2) | (2, 1)))
            .map(|(i, _)| i)
            .collect();
        assert!(expected.iter().all(|&i| code.check(i).0 == CheckType::Z));
        for rounds in [3, 4] {
            let c = build_memory_circuit(&code, rounds, Basis::Z, &NoiseModel::data_level(0.0)).unwrap();
            let inj = Injection {
                after: c.round_markers[2] - 1,
                qubit: 4,
                kind: InjectionKind::Pauli(Pauli::X),
            };
            let (dets, obs) = propagate(&c, &[inj]);
            let fired: BTreeSet<usize> = dets.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
            let want: BTreeSet<usize> = expected.iter().map(|&c| 2 * code.num_checks() + c).collect();
            assert_eq!(fired, want, "rounds = {rounds}");
            assert_eq!(obs, vec![false]);
        }
    }

    #[test]
    fn surface_schedule_orders_shared_qubits_consistently() {
        for d in [3, 5] {
            let code = surface(d);
            let layers = extraction_schedule(&code).unwrap();
            let mut step: HashMap<(usize, usize), usize> = HashMap::new();
            for (t, layer) in layers.iter().enumerate() {
                let mut qubits = BTreeSet::new();
                for &(c, q) in layer {
                    assert!(qubits.insert(q), "qubit {q} used twice in step {t}");
                    step.insert((c, q), t);
                }
            }
            // An X and a Z check overlapping on two qubits must touch both in
            // the same relative order, else the measured operators anticommute.
            for x in 0..code.num_x_checks() {
                for z in 0..code.num_z_checks() {
                    let zc = code.check_index(CheckType::Z, z);
                    let shared: Vec<usize> = code
                        .hx
                        .row_support(x)
                        .into_iter()
                        .filter(|q| code.hz.get(z, *q))
                        .collect();
                    let before: Vec<bool> = shared.iter().map(|&q| step[&(x, q)] < step[&(zc, q)]).collect();
                    assert!(before.windows(2).all(|w| w[0] == w[1]));
                }
            }
        }
    }

    /// Every single fault that leaves the same detector pattern must flip the
    /// logical identically; otherwise two faults would defeat distance 3.
    #[test]
    fn circuit_level_surface_has_fault_distance_three() {
        let code = surface(3);
        for basis in [Basis::X, Basis::Z] {
            let c = build_memory_circuit(&code, 3, basis, &NoiseModel::circuit_level(0.001)).unwrap();
            let mut seen: HashMap<Vec<bool>, Vec<bool>> = HashMap::new();
            seen.insert(vec![false; c.rounds() * c.checks_per_round], vec![false]);
            for fault in fault_locations(&c) {
                let (dets, obs) = propagate(&c, &fault.injections);
                let prev = seen.entry(dets).or_insert_with(|| obs.clone());
                assert_eq!(*prev, obs, "{basis:?} fault {fault:?} is ambiguous");
            }
        }
    }

    #[test]
    fn bb_schedule_layers_are_conflict_free() {
        let code = BbPreset::Bb72.build().unwrap();
        let layers = extraction_schedule(&code).unwrap();
        let total: usize = layers.iter().map(Vec::len).sum();
        assert_eq!(total, code.hx.supports().iter().chain(code.hz.supports().iter()).map(Vec::len).sum::<usize>());
        for layer in &layers {
            let qubits: BTreeSet<usize> = layer.iter().map(|&(_, q)| q).collect();
            let checks: BTreeSet<usize> = layer.iter().map(|&(c, _)| c).collect();
            assert_eq!(qubits.len(), layer.len());
            assert_eq!(checks.len(), layer.len());
        }
        let c = build_memory_circuit(&code, 2, Basis::Z, &NoiseModel::circuit_level(0.0)).unwrap();
        assert_eq!(sample(&c, 64, 1).count_detections(), 0);
    }

    #[test]
    fn rejects_unscheduled_codes_and_zero_rounds() {
        let mut code = surface(3);
        assert!(matches!(
            build_memory_circuit(&code, 0, Basis::Z, &NoiseModel::data_level(0.1)),
            Err(SimError::NoRounds)
        ));
        code.name = "custom".into();
        assert!(build_memory_circuit(&code, 2, Basis::Z, &NoiseModel::data_level(0.1)).is_ok());
        assert!(matches!(
            build_memory_circuit(&code, 2, Basis::Z, &NoiseModel::circuit_level(0.1)),
            Err(SimError::NoSchedule(_))
        ));
    }

    #[test]
    fn text_form_roundtrips() {
        for noise in [NoiseModel::circuit_level(0.002), NoiseModel::phenomenological(0.01, 0.02)] {
            let c = build_memory_circuit(&surface(3), 2, Basis::X, &noise).unwrap();
            let back = Circuit::from_text(&c.to_text()).unwrap();
            assert_eq!(back, c);
        }
        assert!(Circuit::from_text("# qubits 2 checks 1 observables 0\nM 0\nDETECTOR(0, 0) rec[-2]\n").is_err());
        assert!(Circuit::from_text("FOO 1").is_err());
    }
}
