use crate::error::{Error, Result};

/// `dot(a, b) / (||a|| ||b||)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!(
            "cosine_similarity: lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("cosine similarity of a zero vector"));
    }
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("softmax of non-finite logits"));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / z).collect())
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "l1_distance: lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1., 0.], &[1., 0.]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1., 0.], &[0., 1.]).unwrap(), 0.0);
        let c = cosine_similarity(&[3., 4.], &[4., 3.]).unwrap();
        assert!((c - 0.96).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0., 0.], &[1., 0.]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0., 0., 0.]).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax(&[1., 0.]).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((p[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert_eq!(softmax(&[5.0]).unwrap(), vec![1.0]);
        assert!(matches!(softmax(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_distance(&[1., 2.], &[1., 2.]).unwrap(), 0.0);
        assert!((l1_distance(&[0.6, 0.8], &[0.8, 0.6]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(l1_distance(&[1., 1., 1.], &[0., 0., 0.]).unwrap(), 3.0);
        assert!(matches!(l1_distance(&[1.], &[1., 2.]), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(xs in prop::collection::vec(-50.0f64..50.0, 1..1024)) {
            let p = softmax(&xs).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn self_cosine_is_one(xs in prop::collection::vec(-10.0f64..10.0, 1..64)) {
            prop_assume!(xs.iter().any(|&x| x.abs() > 1e-6));
            let c = cosine_similarity(&xs, &xs).unwrap();
            prop_assert!((c - 1.0).abs() <= 1e-12);
        }
    }
}
