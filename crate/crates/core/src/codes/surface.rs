use super::{BinaryMatrix, CheckType, CodeError, CssCode, GridCheck, GridLayout, Layout};

/// Rotated distance-`d` surface code.
///
/// Plaquette cell `(i, j)` with `i + j` even carries an X check, odd a Z
/// check. Weight-two X checks sit on the top and bottom rows, weight-two Z
/// checks on the left and right columns. The X logical is the first column of
/// data qubits and the Z logical the first row, both of weight `d`.
pub fn build_rotated_surface_code(d: usize) -> Result<CssCode, CodeError> {
    if d < 3 || d % 2 == 0 {
        return Err(CodeError::InvalidDistance(d));
    }
    let n = d * d;
    let mut x_checks = Vec::new();
    let mut z_checks = Vec::new();
    for i in 0..=d {
        for j in 0..=d {
            let kind = if (i + j) % 2 == 0 { CheckType::X } else { CheckType::Z };
            let top_bottom = i == 0 || i == d;
            let left_right = j == 0 || j == d;
            let keep = match (top_bottom, left_right) {
                (false, false) => true,
                (true, false) => kind == CheckType::X,
                (false, true) => kind == CheckType::Z,
                (true, true) => false,
            };
            if !keep {
                continue;
            }
            let mut support = Vec::with_capacity(4);
            for r in [i as isize - 1, i as isize] {
                for c in [j as isize - 1, j as isize] {
                    if (0..d as isize).contains(&r) && (0..d as isize).contains(&c) {
                        support.push(r as usize * d + c as usize);
                    }
                }
            }
            let check = GridCheck {
                row: i,
                col: j,
                kind,
                boundary: top_bottom || left_right,
            };
            match kind {
                CheckType::X => x_checks.push((check, support)),
                CheckType::Z => z_checks.push((check, support)),
            }
        }
    }
    let hx = BinaryMatrix::from_supports(n, &x_checks.iter().map(|c| c.1.clone()).collect::<Vec<_>>());
    let hz = BinaryMatrix::from_supports(n, &z_checks.iter().map(|c| c.1.clone()).collect::<Vec<_>>());
    let logicals_x = BinaryMatrix::from_supports(n, &[(0..d).map(|r| r * d).collect()]);
    let logicals_z = BinaryMatrix::from_supports(n, &[(0..d).collect()]);
    let checks = x_checks.into_iter().chain(z_checks).map(|c| c.0).collect();
    let code = CssCode {
        name: format!("surface:{d}"),
        n,
        k: 1,
        d: Some(d),
        hx,
        hz,
        logicals_x,
        logicals_z,
        layout: Layout::Grid(GridLayout { d, checks }),
    };
    code.validate()?;
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::gf2;

    /// Smallest weight of an operator that commutes with `checks` but is not
    /// in the row space of `stabilizers`, by exhaustive subset enumeration.
    fn brute_force_min_logical(checks: &BinaryMatrix, stabilizers: &BinaryMatrix, max_w: usize) -> Option<usize> {
        let n = checks.cols();
        fn rec(
            start: usize,
            left: usize,
            chosen: &mut Vec<usize>,
            n: usize,
            f: &mut dyn FnMut(&[usize]) -> bool,
        ) -> bool {
            if left == 0 {
                return f(chosen);
            }
            for q in start..n {
                chosen.push(q);
                if rec(q + 1, left - 1, chosen, n, f) {
                    return true;
                }
                chosen.pop();
            }
            false
        }
        for w in 1..=max_w {
            let mut hit = |sup: &[usize]| {
                let v = gf2::pack(n, sup);
                checks.mul_vec(&v).iter().all(|&x| x == 0) && !stabilizers.row_space_contains(&v)
            };
            if rec(0, w, &mut Vec::new(), n, &mut hit) {
                return Some(w);
            }
        }
        None
    }

    #[test]
    fn distance_three_counts() {
        let code = build_rotated_surface_code(3).unwrap();
        assert_eq!(code.n, 9);
        assert_eq!(code.k, 1);
        assert_eq!(code.num_checks(), 8);
        assert_eq!(code.n - code.hx.rank() - code.hz.rank(), 1);
        assert!(code.hx.mul_transpose(&code.hz).is_zero());
    }

    #[test]
    fn check_count_is_d_squared_minus_one() {
        for d in [3, 5, 7, 9] {
            let code = build_rotated_surface_code(d).unwrap();
            assert_eq!(code.num_checks(), d * d - 1);
            assert_eq!(code.num_x_checks(), code.num_z_checks());
            code.validate().unwrap();
        }
    }

    #[test]
    fn rejects_bad_distances() {
        for d in [0, 1, 2, 4, 6] {
            assert!(matches!(build_rotated_surface_code(d), Err(CodeError::InvalidDistance(_))));
        }
    }

    #[test]
    fn brute_force_distance_matches() {
        for d in [3, 5] {
            let code = build_rotated_surface_code(d).unwrap();
            // X-type logicals: commute with Z checks, not generated by X checks.
            assert_eq!(brute_force_min_logical(&code.hz, &code.hx, d), Some(d));
            assert_eq!(brute_force_min_logical(&code.hx, &code.hz, d), Some(d));
            assert_eq!(code.logicals_x.row_weight(0), d);
            assert_eq!(code.logicals_z.row_weight(0), d);
        }
    }
}
