//! Central finite differences, kept independent of the tape's backward rules.

use crate::{ParamId, ParamStore, Real};

/// Relative error with a floor on the denominator so that two tiny values
/// that agree in absolute terms are not reported as a mismatch.
pub fn relative_error(analytic: Real, numeric: Real, floor: Real) -> Real {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate of `id`
/// (or only those listed in `coords`).
pub fn numeric_grad<F>(
    store: &ParamStore,
    id: ParamId,
    coords: Option<&[usize]>,
    h: Real,
    f: F,
) -> Vec<(usize, Real)>
where
    F: Fn(&ParamStore) -> Real,
{
    let mut work = store.clone();
    let n = store.tensor(id).len();
    let all: Vec<usize> = (0..n).collect();
    let coords = coords.unwrap_or(&all);
    coords
        .iter()
        .map(|&i| {
            let orig = work.tensor(id).data()[i];
            work.tensor_mut(id).data_mut()[i] = orig + h;
            let plus = f(&work);
            work.tensor_mut(id).data_mut()[i] = orig - h;
            let minus = f(&work);
            work.tensor_mut(id).data_mut()[i] = orig;
            (i, (plus - minus) / (2.0 * h))
        })
        .collect()
}

/// Worst relative error between `analytic` and central differences over the
/// chosen coordinates of one parameter.
pub fn max_relative_error<F>(
    store: &ParamStore,
    id: ParamId,
    analytic: &[Real],
    coords: Option<&[usize]>,
    h: Real,
    floor: Real,
    f: F,
) -> Real
where
    F: Fn(&ParamStore) -> Real,
{
    numeric_grad(store, id, coords, h, f)
        .into_iter()
        .map(|(i, num)| relative_error(analytic[i], num, floor))
        .fold(0.0, Real::max)
}
