use rand::Rng;

use super::VideoClip;
use crate::error::{Error, Result};

/// Draws `k` distinct frame indices uniformly without replacement, returned
/// in increasing order.
pub fn sample_frames<R: Rng + ?Sized>(clip: &VideoClip, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let t = clip.num_frames();
    if k == 0 || k > t {
        return Err(Error::Invalid(format!("cannot sample {k} frames from a {t}-frame clip")));
    }
    let mut idx = rand::seq::index::sample(rng, t, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}
