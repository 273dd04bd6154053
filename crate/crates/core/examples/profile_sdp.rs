// ADMM cost breakdown on a representative embedded block problem
use nalgebra::DMatrix;
use std::time::Instant;

fn main() {
    // eigendecomposition cost at the embedded dimension
    let n = 42;
    let raw = DMatrix::<f64>::from_fn(n, n, |i, j| ((i * 31 + j * 17) % 11) as f64 / 11.0 - 0.5);
    let sym = (&raw + raw.transpose()) * 0.5;
    let t0 = Instant::now();
    let reps = 2000;
    let mut acc = 0.0;
    for _ in 0..reps {
        let e = sym.clone().symmetric_eigen();
        acc += e.eigenvalues[0];
    }
    println!("eig 42x42: {:?}/call (acc {acc:.2})", t0.elapsed() / reps);

    let n = 21;
    let raw = DMatrix::<f64>::from_fn(n, n, |i, j| ((i * 31 + j * 17) % 11) as f64 / 11.0 - 0.5);
    let sym21 = (&raw + raw.transpose()) * 0.5;
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        let e = sym21.clone().symmetric_eigen();
        acc += e.eigenvalues[0];
    }
    println!("eig 21x21: {:?}/call (acc {acc:.2})", t0.elapsed() / reps);

    // dense mat-vec cost at the problem size
    let m = 135;
    let nv = 5439;
    let a = DMatrix::<f64>::from_fn(m, nv, |i, j| ((i + j) % 7) as f64 / 7.0);
    let v = nalgebra::DVector::<f64>::from_fn(nv, |i, _| (i % 5) as f64 / 5.0);
    let t0 = Instant::now();
    let reps = 2000;
    let mut acc = 0.0;
    for _ in 0..reps {
        let w = &a * &v;
        let u = a.transpose() * &w;
        acc += u[0];
    }
    println!("A*v + At*w (135x5439): {:?}/iter (acc {acc:.2})", t0.elapsed() / reps);
}
