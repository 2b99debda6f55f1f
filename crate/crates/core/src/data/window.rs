use rand::Rng;

use super::BehaviorSequence;

/// Extracts a contiguous window of `min(width, len)` events, uniform over
/// valid start offsets. The onset is re-indexed into the window; if it
/// falls outside, it is dropped and the label reverts to Normal.
pub fn window_sample<R: Rng + ?Sized>(
    seq: &BehaviorSequence,
    width: usize,
    rng: &mut R,
) -> BehaviorSequence {
    let width = width.max(1);
    if seq.len() <= width {
        return seq.clone();
    }
    let start = rng.random_range(0..=seq.len() - width);
    let end = start + width;
    let onset = seq
        .anomaly_onset
        .filter(|&o| o >= start && o < end)
        .map(|o| o - start);
    BehaviorSequence {
        user_id: seq.user_id.clone(),
        events: seq.events[start..end].to_vec(),
        label: if onset.is_some() || seq.anomaly_onset.is_none() {
            seq.label
        } else {
            0
        },
        anomaly_onset: onset,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BehaviorEvent;
    use crate::rng;

    fn seq(len: usize, onset: Option<usize>) -> BehaviorSequence {
        BehaviorSequence {
            user_id: "u".into(),
            events: (0..len)
                .map(|t| BehaviorEvent::new(vec![t as u32 + 1]))
                .collect(),
            label: if onset.is_some() { 3 } else { 0 },
            anomaly_onset: onset,
        }
    }

    #[test]
    fn short_sequence_returned_whole() {
        let s = seq(10, Some(4));
        assert_eq!(window_sample(&s, 10, &mut rng::stream(0, "w")), s);
        assert_eq!(window_sample(&s, 50, &mut rng::stream(0, "w")), s);
    }

    #[test]
    fn start_offsets_are_uniform() {
        // Chi-squared over the 69 valid starts of a 100-event sequence.
        let s = seq(100, None);
        let mut r = rng::stream(11, "window");
        let draws = 10_000;
        let mut counts = [0usize; 69];
        for _ in 0..draws {
            let w = window_sample(&s, 32, &mut r);
            assert_eq!(w.len(), 32);
            let start = w.events[0].attrs[0] as usize - 1;
            assert!(start <= 68);
            counts[start] += 1;
        }
        let expected = draws as f64 / 69.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99th percentile of chi-squared with 68 degrees of freedom.
        assert!(chi2 < 98.03, "chi2 = {chi2}");
    }

    #[test]
    fn deterministic_under_seed() {
        let s = seq(100, None);
        let a = window_sample(&s, 32, &mut rng::stream(5, "w"));
        let b = window_sample(&s, 32, &mut rng::stream(5, "w"));
        assert_eq!(a, b);
    }

    #[test]
    fn onset_outside_window_reverts_label() {
        let s = seq(42, Some(5));
        let mut r = rng::stream(1, "w");
        for _ in 0..200 {
            let w = window_sample(&s, 32, &mut r);
            let start = w.events[0].attrs[0] as usize - 1;
            if start > 5 {
                assert_eq!(w.label, 0);
                assert_eq!(w.anomaly_onset, None);
            } else {
                assert_eq!(w.label, 3);
                assert_eq!(w.anomaly_onset, Some(5 - start));
            }
        }
    }
}
