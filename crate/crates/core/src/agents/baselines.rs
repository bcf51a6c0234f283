use crate::env::CacheMatrix;
use crate::workload::RequestSet;
use crate::Result;

/// Popular-content-first: each satellite caches its `capacity` most
/// requested contents of the previous slot, ties going to the lower index.
pub fn pcf_policy(prev_requests: &RequestSet, capacity: usize) -> Result<CacheMatrix> {
    let (n, f) = (prev_requests.num_sats(), prev_requests.num_contents());
    let mut m = CacheMatrix::new(n, f, capacity);
    for sat in 0..n {
        let row = prev_requests.row(sat);
        let mut order: Vec<usize> = (0..f).collect();
        order.sort_by_key(|&c| (std::cmp::Reverse(row[c]), c));
        order.truncate(capacity);
        m.set_row(sat, &order)?;
    }
    Ok(m)
}

/// No onboard caching: every request falls back to the ground cloud.
pub fn cloud_policy(num_sats: usize, num_contents: usize, capacity: usize) -> CacheMatrix {
    CacheMatrix::new(num_sats, num_contents, capacity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_sat(counts: &[u32]) -> RequestSet {
        RequestSet::from_rows(&[counts.to_vec()]).unwrap()
    }

    #[test]
    fn ties_go_to_lower_index() {
        let m = pcf_policy(&one_sat(&[5, 3, 3, 0, 0, 0]), 2).unwrap();
        assert_eq!(m.cached_contents(0), vec![0, 1]);
        let m = pcf_policy(&one_sat(&[0; 6]), 1).unwrap();
        assert_eq!(m.cached_contents(0), vec![0]);
    }

    #[test]
    fn decreasing_counts_give_prefix() {
        let m = pcf_policy(&one_sat(&[9, 7, 4, 2, 1, 0]), 3).unwrap();
        assert_eq!(m.cached_contents(0), vec![0, 1, 2]);
    }

    #[test]
    fn cloud_caches_nothing() {
        let m = cloud_policy(16, 6, 2);
        assert!((0..16).all(|n| m.row_count(n) == 0));
    }
}
