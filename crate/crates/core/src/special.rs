//! Bessel functions of the first kind for integer order.
//!
//! Miller's backward recurrence normalized with `J_0 + 2 sum_k J_2k = 1`. The
//! recurrence is started far enough above both the order and the argument
//! that the result is accurate to a few ulps of `max_n |J_n(x)|`.

/// `J_n(x)` for every order `0..=nmax`.
pub fn bessel_j_upto(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let top = (nmax as f64).max(ax);
    let mut start = (top + 30.0 + 12.0 * top.sqrt()).ceil() as usize;
    start += start % 2;

    let mut next = 0.0f64; // J_{k+1}
    let mut cur = 1e-30f64; // J_k
    let mut norm = 0.0f64;
    for k in (1..=start).rev() {
        if k <= nmax {
            out[k] = cur;
        }
        if k % 2 == 0 {
            norm += 2.0 * cur;
        }
        let prev = (2.0 * k as f64 / ax) * cur - next;
        next = cur;
        cur = prev;
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    out[0] = cur;
    norm += cur;
    for v in out.iter_mut() {
        *v /= norm;
    }
    if x < 0.0 {
        for (n, v) in out.iter_mut().enumerate() {
            if n % 2 == 1 {
                *v = -*v;
            }
        }
    }
    out
}

/// `J_n(x)` for any integer order.
pub fn bessel_j(n: i64, x: f64) -> f64 {
    let order = n.unsigned_abs() as usize;
    let v = bessel_j_upto(order, x)[order];
    if n < 0 && order % 2 == 1 {
        -v
    } else {
        v
    }
}
