//! Seeded synthetic datasets at desk scale for every model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson, StandardNormal, Weibull};

use crate::data::{Array, Dataset};

use super::ModelError;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn poisson(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    if rate <= 0.0 {
        0.0
    } else {
        Poisson::new(rate).expect("positive rate").sample(rng)
    }
}

/// θ ~ Weibull(1.5, 1), x_n ~ Poisson(θ).
pub fn weibull_poisson(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let theta: f64 = Weibull::new(1.0, 1.5).unwrap().sample(&mut r);
    let x = (0..n).map(|_| poisson(&mut r, theta)).collect();
    Dataset::new().with("x", Array::vector(x))
}

/// `n` draws from N(mean, Σ) with unit variances and correlation `rho`.
pub fn mvn_conjugate(n: usize, mean: &[f64], rho: f64, seed: u64) -> Dataset {
    let d = mean.len();
    let mut cov = crate::linalg::Matrix::identity(d);
    for i in 0..d {
        for j in 0..d {
            if i != j {
                cov[(i, j)] = rho;
            }
        }
    }
    let l = cov.cholesky().expect("valid correlation");
    let mut r = rng(seed);
    let mut y = Vec::with_capacity(n * d);
    for _ in 0..n {
        let e = normals(&mut r, d);
        y.extend(l.mul_vec(&e).iter().zip(mean).map(|(a, m)| a + m));
    }
    Dataset::new()
        .with("y", Array::matrix(n, d, y))
        .with("rho", Array::scalar(rho))
}

/// Intercept column plus `d − 1` standard normal covariates; coefficients
/// drawn from the N(0, 1) prior.
pub fn logistic_regression(n: usize, d: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let beta = normals(&mut r, d);
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = vec![1.0];
        row.extend(normals(&mut r, d - 1));
        let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        y.push(if r.random::<f64>() < crate::special::logistic(eta) { 1.0 } else { 0.0 });
        x.extend(row);
    }
    Dataset::new()
        .with("x", Array::matrix(n, d, x))
        .with("y", Array::vector(y))
}

/// Latent AR(1) log volatility with μ = −1.025, φ = 0.9, σ = 0.6.
pub fn stochastic_volatility(t: usize, seed: u64) -> Dataset {
    stochastic_volatility_with(t, -1.025, 0.9, 0.6, seed).0
}

/// Series and the latent path used to generate it.
pub fn stochastic_volatility_with(t: usize, mu: f64, phi: f64, sigma: f64, seed: u64) -> (Dataset, Vec<f64>) {
    let mut r = rng(seed);
    let mut h = Vec::with_capacity(t);
    let e: f64 = StandardNormal.sample(&mut r);
    h.push(mu + sigma / (1.0 - phi * phi).sqrt() * e);
    for i in 1..t {
        let e: f64 = StandardNormal.sample(&mut r);
        h.push(mu + phi * (h[i - 1] - mu) + sigma * e);
    }
    let y = h
        .iter()
        .map(|&ht| {
            let e: f64 = StandardNormal.sample(&mut r);
            (ht / 2.0).exp() * e
        })
        .collect();
    (Dataset::new().with("y", Array::vector(y)), h)
}

/// Linear regression where only the first half of the `d` regressors
/// carry signal; noise sd 0.5.
pub fn linreg_ard(n: usize, d: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let w: Vec<f64> = (0..d)
        .map(|i| if i < d.div_ceil(2) { 1.0 + r.random::<f64>() } else { 0.0 })
        .collect();
    let x = normals(&mut r, n * d);
    let y = x
        .chunks(d)
        .map(|row| {
            let e: f64 = StandardNormal.sample(&mut r);
            row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.5 * e
        })
        .collect();
    Dataset::new()
        .with("x", Array::matrix(n, d, x))
        .with("y", Array::vector(y))
}

/// Survey-like data: 4 age groups, 4 education levels, 10 states in 3
/// regions, binary sex and race indicators.
pub fn hier_logistic(n: usize, seed: u64) -> Dataset {
    let (n_age, n_edu, states, n_region) = (4, 4, 10, 3);
    let mut r = rng(seed);
    let region: Vec<f64> = (0..states).map(|j| (j % n_region + 1) as f64).collect();
    let v_prev: Vec<f64> = (0..states).map(|_| r.random_range(0.3..0.7)).collect();
    let a_age: Vec<f64> = normals(&mut r, n_age).iter().map(|v| 0.3 * v).collect();
    let a_edu: Vec<f64> = normals(&mut r, n_edu).iter().map(|v| 0.3 * v).collect();
    let a_region: Vec<f64> = normals(&mut r, n_region).iter().map(|v| 0.3 * v).collect();
    let a_state: Vec<f64> = (0..states)
        .map(|j| {
            let e: f64 = StandardNormal.sample(&mut r);
            a_region[j % n_region] + 0.8 * (v_prev[j] - 0.5) + 0.2 * e
        })
        .collect();
    let beta = [0.1, -0.2, -1.0, 0.3];
    let mut cols: [Vec<f64>; 6] = Default::default();
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let f = f64::from(r.random::<bool>());
        let b = f64::from(r.random::<f64>() < 0.15);
        let k = r.random_range(0..n_age);
        let l = r.random_range(0..n_edu);
        let j = r.random_range(0..states);
        let eta = beta[0] + beta[1] * f + beta[2] * b + beta[3] * f * b + a_age[k] + a_edu[l] + a_state[j];
        y.push(f64::from(r.random::<f64>() < crate::special::logistic(eta)));
        for (c, v) in cols.iter_mut().zip([f, b, (k + 1) as f64, (l + 1) as f64, (j + 1) as f64, 0.0]) {
            c.push(v);
        }
    }
    let [female, black, age, edu, state, _] = cols;
    Dataset::new()
        .with("y", Array::vector(y))
        .with("female", Array::vector(female))
        .with("black", Array::vector(black))
        .with("age", Array::vector(age))
        .with("edu", Array::vector(edu))
        .with("state", Array::vector(state))
        .with("region", Array::vector(region))
        .with("v_prev", Array::vector(v_prev))
        .with("n_age", Array::scalar(n_age as f64))
        .with("n_edu", Array::scalar(n_edu as f64))
        .with("n_region", Array::scalar(n_region as f64))
}

fn poisson_matrix(r: &mut ChaCha8Rng, theta: &[f64], beta: &[f64], users: usize, items: usize, k: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(users * items);
    for u in 0..users {
        for i in 0..items {
            let rate: f64 = (0..k).map(|j| theta[u * k + j] * beta[i * k + j]).sum();
            y.push(poisson(r, rate));
        }
    }
    y
}

/// Counts from Gamma(1, 1) factors.
pub fn gamma_poisson_nmf(users: usize, items: usize, k: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let g = Gamma::new(1.0, 1.0).unwrap();
    let theta: Vec<f64> = (0..users * k).map(|_| g.sample(&mut r)).collect();
    let beta: Vec<f64> = (0..items * k).map(|_| g.sample(&mut r)).collect();
    let y = poisson_matrix(&mut r, &theta, &beta, users, items, k);
    Dataset::new()
        .with("y", Array::matrix(users, items, y))
        .with("k", Array::scalar(k as f64))
}

/// Counts from Dir(1000) user weights and Exp(0.1) item factors.
pub fn dirichlet_exponential_nmf(users: usize, items: usize, k: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let g = Gamma::new(1000.0, 1.0).unwrap();
    let mut theta = Vec::with_capacity(users * k);
    for _ in 0..users {
        let raw: Vec<f64> = (0..k).map(|_| g.sample(&mut r)).collect();
        let s: f64 = raw.iter().sum();
        theta.extend(raw.iter().map(|v| v / s));
    }
    let e = rand_distr::Exp::new(0.1).unwrap();
    let beta: Vec<f64> = (0..items * k).map(|_| e.sample(&mut r)).collect();
    let y = poisson_matrix(&mut r, &theta, &beta, users, items, k);
    Dataset::new()
        .with("y", Array::matrix(users, items, y))
        .with("k", Array::scalar(k as f64))
}

/// Equal-weight clusters around `centres` (rows of length D) with
/// isotropic standard deviation `sd`. Returns the dataset and labels.
pub fn gmm_clusters(n: usize, centres: &[Vec<f64>], sd: f64, seed: u64) -> (Dataset, Vec<usize>) {
    let d = centres[0].len();
    let mut r = rng(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    let mut y = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = r.random_range(0..centres.len());
        labels.push(k);
        y.extend(centres[k].iter().map(|c| c + noise.sample(&mut r)));
    }
    let data = Dataset::new()
        .with("y", Array::matrix(n, d, y))
        .with("k", Array::scalar(centres.len() as f64));
    (data, labels)
}

/// Rank-`rank` linear structure in `d` dimensions plus N(0, 0.5²) noise;
/// the model may use up to `m` components.
pub fn ppca(n: usize, d: usize, rank: usize, m: usize, seed: u64) -> Dataset {
    ppca_with_latents(n, d, rank, m, seed).0
}

/// Dataset together with the true latent coordinates (n × rank).
pub fn ppca_with_latents(n: usize, d: usize, rank: usize, m: usize, seed: u64) -> (Dataset, Vec<f64>) {
    let mut r = rng(seed);
    let w: Vec<f64> = normals(&mut r, d * rank).iter().map(|v| 2.0 * v).collect();
    let z = normals(&mut r, n * rank);
    let mut x = Vec::with_capacity(n * d);
    for zn in z.chunks(rank) {
        for wd in w.chunks(rank) {
            let e: f64 = StandardNormal.sample(&mut r);
            x.push(wd.iter().zip(zn).map(|(a, b)| a * b).sum::<f64>() + 0.5 * e);
        }
    }
    let data = Dataset::new()
        .with("x", Array::matrix(n, d, x))
        .with("m", Array::scalar(m as f64));
    (data, z)
}

/// [`ppca`] with a response equal to the first latent coordinate plus
/// N(0, 0.1²) noise.
pub fn sup_ppca(n: usize, d: usize, rank: usize, m: usize, seed: u64) -> Dataset {
    let (data, z) = ppca_with_latents(n, d, rank, m, seed);
    let mut r = rng(seed ^ 0x5eed);
    let y = z
        .chunks(rank)
        .map(|zn| {
            let e: f64 = StandardNormal.sample(&mut r);
            zn[0] + 0.1 * e
        })
        .collect();
    data.with("y", Array::vector(y))
}

/// y_n = tanh(x_nᵀβ) + N(0, 1) noise with β from the prior.
pub fn tanh_regression(n: usize, d: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let beta = normals(&mut r, d);
    let x: Vec<f64> = normals(&mut r, n * d).iter().map(|v| v / (d as f64).sqrt()).collect();
    let y = x
        .chunks(d)
        .map(|row| {
            let e: f64 = StandardNormal.sample(&mut r);
            row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>().tanh() + e
        })
        .collect();
    Dataset::new()
        .with("x", Array::matrix(n, d, x))
        .with("y", Array::vector(y))
}

/// A desk-scale dataset for any registered model.
pub fn default_dataset(name: &str, seed: u64) -> Result<Dataset, ModelError> {
    Ok(match name {
        "weibull_poisson" => weibull_poisson(20, seed),
        "mvn_conjugate" => mvn_conjugate(100, &[1.0, -1.0], 0.9, seed),
        "logistic_regression" => logistic_regression(1000, 10, seed),
        "stochastic_volatility" => stochastic_volatility(100, seed),
        "linreg_ard" => linreg_ard(200, 10, seed),
        "hier_logistic" => hier_logistic(500, seed),
        "gamma_poisson_nmf" => gamma_poisson_nmf(20, 15, 3, seed),
        "dirichlet_exponential_nmf" => dirichlet_exponential_nmf(20, 15, 3, seed),
        "gmm" => gmm_clusters(500, &[vec![-2.0, -2.0], vec![2.0, 2.0]], 0.5, seed).0,
        "ppca_ard" => ppca(200, 10, 2, 5, seed),
        "sup_ppca_ard" => sup_ppca(200, 10, 2, 5, seed),
        other => return Err(ModelError::UnknownModel(other.to_string())),
    })
}
