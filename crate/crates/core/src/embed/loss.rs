use crate::error::{Error, Result};

/// Gradients of the triplet loss with respect to the three raw embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Unit vector and norm. The vector is first divided by its largest
/// magnitude, so inputs that differ by an exactly representable positive
/// factor normalize to bitwise identical vectors.
fn normalized(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite embedding".into()));
    }
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let scaled: Vec<f64> = v.iter().map(|x| x / peak).collect();
    let norm = scaled.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((scaled.iter().map(|x| x / norm).collect(), norm * peak))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(a: &[f64], p: &[f64], n: &[f64]) -> Result<()> {
    if a.is_empty() || a.len() != p.len() || a.len() != n.len() {
        return Err(Error::Shape(format!(
            "triplet embeddings have lengths {}, {}, {}",
            a.len(),
            p.len(),
            n.len()
        )));
    }
    Ok(())
}

/// Two hinges on squared distances between L2-normalized embeddings:
/// `max(0, d(A,P) - d(A,N) + m) + max(0, d(A,P) - d(P,N) + m)`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    check_dims(anchor, positive, negative)?;
    let (a, _) = normalized(anchor)?;
    let (p, _) = normalized(positive)?;
    let (n, _) = normalized(negative)?;
    let ap = sq_dist(&a, &p);
    Ok((ap - sq_dist(&a, &n) + margin).max(0.0) + (ap - sq_dist(&p, &n) + margin).max(0.0))
}

/// Loss and analytic gradients. Inactive hinges contribute nothing.
pub fn triplet_loss_grad(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<TripletGrad> {
    check_dims(anchor, positive, negative)?;
    let (a, na) = normalized(anchor)?;
    let (p, np) = normalized(positive)?;
    let (n, nn) = normalized(negative)?;
    let d = a.len();
    let ap = sq_dist(&a, &p);
    let first = ap - sq_dist(&a, &n) + margin;
    let second = ap - sq_dist(&p, &n) + margin;
    let mut loss = 0.0;
    // Gradients with respect to the unit vectors.
    let mut ga = vec![0.0; d];
    let mut gp = vec![0.0; d];
    let mut gn = vec![0.0; d];
    if first > 0.0 {
        loss += first;
        for i in 0..d {
            ga[i] += 2.0 * (n[i] - p[i]);
            gp[i] += 2.0 * (p[i] - a[i]);
            gn[i] += 2.0 * (a[i] - n[i]);
        }
    }
    if second > 0.0 {
        loss += second;
        for i in 0..d {
            ga[i] += 2.0 * (a[i] - p[i]);
            gp[i] += 2.0 * (n[i] - a[i]);
            gn[i] += 2.0 * (p[i] - n[i]);
        }
    }
    Ok(TripletGrad {
        loss,
        anchor: through_normalization(&a, na, &ga),
        positive: through_normalization(&p, np, &gp),
        negative: through_normalization(&n, nn, &gn),
    })
}

/// Pulls a gradient on `x/|x|` back to `x`: `(g - x̂(x̂·g)) / |x|`.
fn through_normalization(unit: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    let dot: f64 = unit.iter().zip(g).map(|(u, g)| u * g).sum();
    unit.iter().zip(g).map(|(u, g)| (g - u * dot) / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_central_differences() {
        let a = [0.3, -1.2, 0.5, 0.9];
        let p = [1.1, 0.2, -0.4, 0.3];
        let n = [0.2, -1.0, 0.7, 1.0];
        let g = triplet_loss_grad(&a, &p, &n, 0.2).unwrap();
        assert!(g.loss > 0.0);
        let h = 1e-6;
        for (which, grad) in [(0, &g.anchor), (1, &g.positive), (2, &g.negative)] {
            for i in 0..4 {
                let mut v = [a, p, n];
                v[which][i] += h;
                let up = triplet_loss(&v[0], &v[1], &v[2], 0.2).unwrap();
                v[which][i] -= 2.0 * h;
                let down = triplet_loss(&v[0], &v[1], &v[2], 0.2).unwrap();
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-6, "{which}/{i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn zero_norm_is_rejected() {
        assert!(matches!(
            triplet_loss(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], 0.2),
            Err(Error::ZeroNorm)
        ));
    }
}
