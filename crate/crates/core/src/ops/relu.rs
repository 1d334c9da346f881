use crate::error::Result;
use crate::tensor::Tensor4;

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    x.map(|v| v.max(0.0))
}

/// Passes `grad_out` where `x > 0`, zero elsewhere (including the kink).
pub fn relu_backward(x: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
    x.zip_map(grad_out, "relu_backward", |v, g| if v > 0.0 { g } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::tensor::Shape4;
    use crate::testutil::{check_coords, random};

    #[test]
    fn definition() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = random(Shape4::new(1, 2, 3, 3), 1).map(f64::abs);
        assert_eq!(relu_forward(&pos), pos);
    }

    #[test]
    fn gradient_away_from_kink() {
        let mut rng = SplitMix64::new(3);
        for trial in 0..20 {
            let x = random(Shape4::new(2, 3, 4, 4), trial).map(|v| if v.abs() < 1e-3 { 0.5 } else { v });
            let r = random(x.shape(), trial + 50);
            let g = relu_backward(&x, &r).unwrap();
            let e = check_coords(
                |v| relu_forward(&Tensor4::from_vec(x.shape(), v.to_vec()).unwrap()).mul(&r).unwrap().sum(),
                x.data(),
                g.data(),
                usize::MAX,
                &mut rng,
            );
            assert!(e < 1e-4, "{e}");
        }
    }
}
