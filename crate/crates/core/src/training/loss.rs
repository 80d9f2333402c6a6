use ndarray::{Array2, ArrayView1, ArrayView2};

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index form of a triplet batch: rows of an embedding matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripletRows {
    pub heads: Vec<usize>,
    pub tails: Vec<usize>,
    /// One row of negatives per head.
    pub negatives: Vec<Vec<usize>>,
}

/// Mean over heads of the mean over that head's negatives of
/// `softplus(h·n − h·t)`.
pub fn bpr_loss(h: &ArrayView2<f64>, t: &ArrayView2<f64>, negatives: &[ArrayView2<f64>]) -> f64 {
    let b = h.nrows();
    if b == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..b {
        let pos = h.row(i).dot(&t.row(i));
        let negs = &negatives[i];
        let mut head = 0.0;
        for n in negs.rows() {
            head += softplus(h.row(i).dot(&n) - pos);
        }
        total += head / negs.nrows() as f64;
    }
    total / b as f64
}

fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b)
}

/// Loss and its gradient with respect to the rows of `emb`. Rows used more
/// than once accumulate.
pub fn bpr_loss_and_grad(emb: &Array2<f64>, rows: &TripletRows) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(emb.dim());
    let b = rows.heads.len();
    if b == 0 {
        return (0.0, grad);
    }
    let mut total = 0.0;
    for i in 0..b {
        let (hi, ti) = (rows.heads[i], rows.tails[i]);
        let negs = &rows.negatives[i];
        let scale = 1.0 / (negs.len() as f64 * b as f64);
        let pos = dot(emb.row(hi), emb.row(ti));
        let mut head = 0.0;
        for &ni in negs {
            let x = dot(emb.row(hi), emb.row(ni)) - pos;
            head += softplus(x);
            let gx = sigmoid(x) * scale;
            // d/dh (h·n − h·t) = n − t, d/dt = −h, d/dn = h
            let (h_row, t_row, n_row) = (emb.row(hi).to_owned(), emb.row(ti).to_owned(), emb.row(ni).to_owned());
            grad.row_mut(hi).scaled_add(gx, &n_row);
            grad.row_mut(hi).scaled_add(-gx, &t_row);
            grad.row_mut(ti).scaled_add(-gx, &h_row);
            grad.row_mut(ni).scaled_add(gx, &h_row);
        }
        total += head / negs.len() as f64;
    }
    (total / b as f64, grad)
}
