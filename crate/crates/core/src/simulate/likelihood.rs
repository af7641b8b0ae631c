use super::marked::MarkedEventSequence;
use super::spec::MarkedProcessSpec;
use crate::error::{Error, Result};

/// Log density of a marked sequence: the log mark intensities at the events
/// minus the integrated total intensity. The integral uses the midpoint rule
/// between the points where the intensity may jump, with at most `step`
/// seconds per panel (default `theta / 10`).
/// Returns `-inf` when some event has zero intensity.
pub fn loglik_marked(seq: &MarkedEventSequence, spec: &MarkedProcessSpec, step: Option<f64>) -> Result<f64> {
    spec.validate()?;
    let marks = spec.marks();
    if seq.marks != marks || seq.nu != spec.nu {
        return Err(Error::Argument("sequence marks do not match the spec".into()));
    }
    let step = step.unwrap_or(spec.theta / 10.0);
    if !(step > 0.0) {
        return Err(Error::Argument("integration step must be positive".into()));
    }
    let t_end = spec.duration;
    // event times and the spike times each event determines
    let spikes: Vec<Vec<(usize, f64)>> = seq
        .events
        .iter()
        .map(|e| {
            let m = &marks[e.mark];
            m.neurons
                .iter()
                .enumerate()
                .map(|(pos, &i)| (i, if pos == 1 { e.time + m.lag } else { e.time }))
                .collect()
        })
        .collect();
    if seq.events.windows(2).any(|w| w[1].time < w[0].time) {
        return Err(Error::Argument("events must be in time order".into()));
    }

    let mut cuts = vec![0.0, t_end];
    let lags: Vec<f64> = spec
        .interactions
        .iter()
        .filter(|x| x.lag > 0.0)
        .map(|x| x.lag)
        .collect();
    for s in spikes.iter().flatten() {
        for d in [-spec.theta, 0.0, spec.theta] {
            cuts.push(s.1 + d);
            for &l in &lags {
                cuts.push(s.1 + d - l);
            }
        }
    }
    for e in &seq.events {
        cuts.push(e.time);
    }
    for &l in &lags {
        cuts.push(t_end - l);
    }
    for n in &spec.neurons {
        cuts.extend_from_slice(n.rate.kinks());
    }
    for x in &spec.interactions {
        cuts.extend_from_slice(x.gamma.kinks());
    }
    cuts.retain(|c| (0.0..=t_end).contains(c));
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();

    let mut known: Vec<Vec<f64>> = vec![Vec::new(); spec.nu];
    let mut lam = vec![0.0; marks.len()];
    let mut next = 0;
    let admit = |t: f64, known: &mut Vec<Vec<f64>>, next: &mut usize| {
        while *next < seq.events.len() && seq.events[*next].time < t {
            for &(i, s) in &spikes[*next] {
                let pos = known[i].partition_point(|&e| e < s);
                known[i].insert(pos, s);
            }
            *next += 1;
        }
    };

    let mut integral = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let panels = ((b - a) / step).ceil().max(1.0) as usize;
        let h = (b - a) / panels as f64;
        for k in 0..panels {
            let t = a + (k as f64 + 0.5) * h;
            admit(t, &mut known, &mut next);
            spec.mark_intensities(t, &known, &mut lam);
            integral += h * lam.iter().sum::<f64>();
        }
    }

    let mut known: Vec<Vec<f64>> = vec![Vec::new(); spec.nu];
    let mut next = 0;
    let mut events_term = 0.0;
    for e in &seq.events {
        admit(e.time, &mut known, &mut next);
        spec.mark_intensities(e.time, &known, &mut lam);
        let l = lam[e.mark];
        if !(l > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        events_term += l.ln();
    }
    Ok(events_term - integral)
}
