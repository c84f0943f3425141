//! Reverse-mode automatic differentiation over dense `f64` matrices.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::geometry::TAU;

    fn store_with(name: &str, t: Tensor) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert(name, t).unwrap();
        (s, id)
    }

    #[test]
    fn tanh_at_zero() {
        let (s, id) = store_with("x", Tensor::scalar(0.0));
        let mut tape = Tape::new();
        let x = tape.param(&s, id).unwrap();
        let y = tape.tanh(x).unwrap();
        assert_eq!(tape.value(y).item(), 0.0);
        let g = tape.backward(y, &s).unwrap();
        assert_eq!(g.get(id).item(), 1.0);
    }

    #[test]
    fn logsumexp_of_zeros() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.0, 0.0])).unwrap();
        let y = tape.logsumexp(x).unwrap();
        assert!((tape.value(y).item() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_is_stable_for_large_inputs() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1000.0, 1000.0])).unwrap();
        let y = tape.logsumexp(x).unwrap();
        assert!((tape.value(y).item() - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn wrap_passthrough_forward_and_gradient() {
        let (s, id) = store_with("x", Tensor::scalar(7.0));
        let mut tape = Tape::new();
        let x = tape.param(&s, id).unwrap();
        let y = tape.wrap_passthrough(x, &[Some(TAU)]).unwrap();
        assert!((tape.value(y).item() - (7.0 - TAU)).abs() < 1e-12);
        let g = tape.backward(y, &s).unwrap();
        assert_eq!(g.get(id).item(), 1.0);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let (s, id) = store_with("theta", Tensor::row(vec![0.3, -2.0, 5.0]));
        let mut tape = Tape::new();
        let x = tape.param(&s, id).unwrap();
        let y = tape.sum(x).unwrap();
        let g = tape.backward(y, &s).unwrap();
        assert_eq!(g.get(id).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_square() {
        let (s, id) = store_with("theta", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let x = tape.param(&s, id).unwrap();
        let y = tape.square(x).unwrap();
        assert_eq!(tape.backward(y, &s).unwrap().get(id).item(), 6.0);
    }

    #[test]
    fn disconnected_parameters_get_zero() {
        let (s, id) = store_with("theta", Tensor::row(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(4.0)).unwrap();
        let y = tape.square(c).unwrap();
        let g = tape.backward(y, &s).unwrap();
        assert_eq!(g.get(id).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let (s, id) = store_with("theta", Tensor::row(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let x = tape.param(&s, id).unwrap();
        assert!(matches!(tape.backward(x, &s), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![1.0, 2.0])).unwrap();
        let b = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(tape.add(a, b), Err(Error::Contract(_))));
        assert!(matches!(tape.matmul(a, b), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_output_names_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(0.0)).unwrap();
        match tape.log(a) {
            Err(Error::Numerical { op }) => assert_eq!(op, "log"),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn fan_out_accumulates() {
        let (s, id) = store_with("x", Tensor::row(vec![0.4, -1.3]));
        let f = |tape: &mut Tape, s: &ParamStore, twice: bool| {
            let x = tape.param(s, id).unwrap();
            let fx = tape.tanh(x).unwrap();
            let fx = tape.sum(fx).unwrap();
            if twice {
                let fx2 = tape.tanh(x).unwrap();
                let fx2 = tape.sum(fx2).unwrap();
                tape.add(fx, fx2).unwrap()
            } else {
                tape.scale(fx, 2.0).unwrap()
            }
        };
        let mut t1 = Tape::new();
        let r1 = f(&mut t1, &s, true);
        let mut t2 = Tape::new();
        let r2 = f(&mut t2, &s, false);
        let g1 = t1.backward(r1, &s).unwrap();
        let g2 = t2.backward(r2, &s).unwrap();
        for (a, b) in g1.get(id).data().iter().zip(g2.get(id).data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_check_sum_of_squares() {
        let (s, id) = store_with("theta", Tensor::row(vec![0.7, -1.1, 2.5, 0.01]));
        let err = grad_check(&s, 1e-5, |tape, s| {
            let x = tape.param(s, id)?;
            let sq = tape.square(x)?;
            tape.sum(sq)
        })
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn grad_check_every_primitive() {
        let mut s = ParamStore::new();
        let a = s
            .insert("a", Tensor::new(3, 2, vec![0.3, -0.8, 1.2, 0.5, -0.4, 0.9]).unwrap())
            .unwrap();
        let b = s
            .insert("b", Tensor::new(2, 3, vec![0.2, 0.7, -0.6, 1.1, -0.3, 0.4]).unwrap())
            .unwrap();
        let bias = s.insert("bias", Tensor::row(vec![0.1, -0.2, 0.3])).unwrap();
        let err = grad_check(&s, 1e-6, |tape, s| {
            let a = tape.param(s, a)?;
            let b = tape.param(s, b)?;
            let bias = tape.param(s, bias)?;
            let ab = tape.matmul(a, b)?; // 3x3
            let h = tape.add_bias(ab, bias)?;
            let h = tape.tanh(h)?;
            let e = tape.exp(h)?;
            let l = tape.log(e)?;
            let sn = tape.sin(l)?;
            let cs = tape.cos(h)?;
            let m = tape.mul(sn, cs)?;
            let sq = tape.square(m)?;
            let sq = tape.shift(sq, 0.5)?;
            let rt = tape.sqrt(sq)?;
            let ab_abs = tape.abs(ab)?;
            let shifted = tape.shift(ab, -0.2)?;
            let r = tape.relu(shifted)?;
            let x = tape.sub(rt, ab_abs)?;
            let x = tape.add(x, r)?;
            let t = tape.transpose(x)?;
            let cat = tape.concat(&[x, t])?; // 3x6
            let sl = tape.slice_cols(cat, 1, 5)?; // 3x4
            let g = tape.gather_rows(sl, &[2, 0, 2, 1])?; // 4x4
            let rs = tape.reshape(g, 2, 8)?;
            let wrapped = tape.wrap_passthrough(rs, &[Some(1.0); 8])?;
            let lse = tape.logsumexp(wrapped)?; // 2x1
            let rsum = tape.row_sum(rs)?;
            let both = tape.add(lse, rsum)?;
            let both = tape.scale(both, 0.7)?;
            let m1 = tape.mean(both)?;
            let s1 = tape.sum(both)?;
            tape.add(m1, s1)
        })
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(2, 2, vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0]).unwrap())
            .unwrap();
        s.insert("b", Tensor::row(vec![std::f64::consts::PI])).unwrap();
        let back = ParamStore::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        for ((_, a), (_, b)) in s.iter().zip(back.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
