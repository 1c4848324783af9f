//! Plain-text dataset files.
//!
//! ```text
//! # mspr-dataset v1
//! env=pointmaze_medium
//! mode=navigate
//! sigma=2.0000000000000001e-1
//! seed=0
//! expert=v1
//! traj_id,t,s_0,s_1,a_0,a_1,last
//! 0,0,...
//! ```
//!
//! One row per `(state, action)` pair, then a row with `last=1` carrying the
//! terminal state and zeroed actions. Floats use 17 significant digits so
//! files round-trip bit-exactly.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{CollectMode, DatasetMeta, OfflineDataset, Trajectory};
use crate::error::{Error, Result};
use crate::gcenv::{state_len, EnvId, EnvState};

pub const HEADER: &str = "# mspr-dataset v1";

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset<W: Write>(w: W, ds: &OfflineDataset) -> Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "{HEADER}")?;
    writeln!(w, "env={}", ds.env)?;
    writeln!(w, "mode={}", ds.meta.mode)?;
    writeln!(w, "sigma={}", fmt_f64(ds.meta.sigma))?;
    writeln!(w, "seed={}", ds.meta.seed)?;
    writeln!(w, "expert={}", ds.meta.expert)?;
    if let Some(k) = ds.meta.fragment_cells {
        writeln!(w, "fragment_cells={k}")?;
    }
    let k = state_len(ds.env);
    let cols: Vec<String> = (0..k).map(|i| format!("s_{i}")).collect();
    writeln!(w, "traj_id,t,{},a_0,a_1,last", cols.join(","))?;
    for (id, traj) in ds.trajectories.iter().enumerate() {
        for (t, s) in traj.states.iter().enumerate() {
            let (a, last) = match traj.actions.get(t) {
                Some(a) => (*a, 0),
                None => ([0.0, 0.0], 1),
            };
            let sv: Vec<String> = s.values().into_iter().map(fmt_f64).collect();
            writeln!(w, "{id},{t},{},{},{},{last}", sv.join(","), fmt_f64(a[0]), fmt_f64(a[1]))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save(ds: &OfflineDataset, path: impl AsRef<Path>) -> Result<()> {
    let f = fs::File::create(path)?;
    write_dataset(f, ds)
}

pub fn load(path: impl AsRef<Path>) -> Result<OfflineDataset> {
    read_dataset(BufReader::new(fs::File::open(path)?))
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::format(line, format!("cannot parse {what} `{s}`")))
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<OfflineDataset> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, Ok(l))) if l.trim_end() == HEADER => {}
        Some((n, Ok(_))) => return Err(Error::format(n, format!("expected `{HEADER}`"))),
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(Error::format(1, "empty file")),
    }

    let (mut env, mut mode, mut sigma, mut seed, mut expert, mut frag) = (None, None, None, None, None, None);
    let mut columns_seen = false;
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut cur_states: Vec<EnvState> = Vec::new();
    let mut cur_actions = Vec::new();
    let mut open = false;
    let mut last_line = 1;

    for (n, line) in lines {
        let line = line?;
        last_line = n;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if !columns_seen {
            if line.starts_with("traj_id,") {
                columns_seen = true;
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(n, "expected key=value metadata"))?;
            match k {
                "env" => env = Some(v.parse::<EnvId>().map_err(|e| Error::format(n, e.to_string()))?),
                "mode" => mode = Some(v.parse::<CollectMode>().map_err(|e| Error::format(n, e.to_string()))?),
                "sigma" => sigma = Some(parse_num::<f64>(v, n, "sigma")?),
                "seed" => seed = Some(parse_num::<u64>(v, n, "seed")?),
                "expert" => expert = Some(v.to_string()),
                "fragment_cells" => frag = Some(parse_num::<usize>(v, n, "fragment_cells")?),
                other => return Err(Error::format(n, format!("unknown metadata key `{other}`"))),
            }
            continue;
        }
        let env = env.ok_or_else(|| Error::format(n, "missing env metadata"))?;
        let k = state_len(env);
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k + 5 {
            return Err(Error::format(n, format!("expected {} fields, got {}", k + 5, fields.len())));
        }
        let id: usize = parse_num(fields[0], n, "traj_id")?;
        let t: usize = parse_num(fields[1], n, "t")?;
        if id != trajectories.len() {
            return Err(Error::format(n, format!("expected trajectory {}, got {id}", trajectories.len())));
        }
        if t != cur_states.len() {
            return Err(Error::format(n, format!("expected t={}, got {t}", cur_states.len())));
        }
        let mut vals = Vec::with_capacity(k + 2);
        for f in &fields[2..k + 4] {
            let v: f64 = parse_num(f, n, "value")?;
            if !v.is_finite() {
                return Err(Error::format(n, "non-finite value"));
            }
            vals.push(v);
        }
        let last: u8 = parse_num(fields[k + 4], n, "last flag")?;
        cur_states.push(EnvState::from_values(env, &vals[..k]).map_err(|e| Error::format(n, e.to_string()))?);
        open = true;
        match last {
            0 => cur_actions.push([vals[k], vals[k + 1]]),
            1 => {
                if vals[k] != 0.0 || vals[k + 1] != 0.0 {
                    return Err(Error::format(n, "terminal row must carry zero actions"));
                }
                let traj = Trajectory::new(std::mem::take(&mut cur_states), std::mem::take(&mut cur_actions))
                    .map_err(|e| Error::format(n, e.to_string()))?;
                trajectories.push(traj);
                open = false;
            }
            _ => return Err(Error::format(n, "last flag must be 0 or 1")),
        }
    }
    if open {
        return Err(Error::format(last_line, "file ends inside a trajectory (truncated)"));
    }
    if !columns_seen {
        return Err(Error::format(last_line, "missing column header"));
    }
    let missing = |what: &str| Error::format(last_line, format!("missing `{what}` metadata"));
    let ds = OfflineDataset {
        env: env.ok_or_else(|| missing("env"))?,
        meta: DatasetMeta {
            mode: mode.ok_or_else(|| missing("mode"))?,
            sigma: sigma.ok_or_else(|| missing("sigma"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            expert: expert.ok_or_else(|| missing("expert"))?,
            fragment_cells: frag,
        },
        trajectories,
    };
    ds.validate().map_err(|e| Error::format(last_line, e.to_string()))?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{collect, CollectConfig};
    use crate::gcenv::EnvSpec;

    fn small(id: EnvId, mode: CollectMode) -> OfflineDataset {
        let spec = EnvSpec::new(id);
        let cfg = CollectConfig { mode, sigma: 0.3, target_transitions: 150, seed: 11, ..Default::default() };
        collect(&spec, &cfg).unwrap()
    }

    fn round_trip(ds: &OfflineDataset) -> OfflineDataset {
        let mut buf = Vec::new();
        write_dataset(&mut buf, ds).unwrap();
        read_dataset(&buf[..]).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        for (id, mode) in [
            (EnvId::PointMazeMedium, CollectMode::Navigate),
            (EnvId::PointMazeLarge, CollectMode::Stitch),
            (EnvId::PushBox, CollectMode::Navigate),
        ] {
            let ds = small(id, mode);
            assert_eq!(round_trip(&ds), ds);
        }
    }

    #[test]
    fn three_trajectory_round_trip_preserves_metadata() {
        let mut ds = small(EnvId::PointMazeMedium, CollectMode::Navigate);
        ds.trajectories.truncate(3);
        let back = round_trip(&ds);
        assert_eq!(back.trajectories.len(), 3);
        assert_eq!(back.meta, ds.meta);
        assert_eq!(back.meta.sigma.to_bits(), 0.3f64.to_bits());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let ds = small(EnvId::PointMazeMedium, CollectMode::Navigate);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: Vec<&str> = text.lines().collect();
        let truncated = cut[..cut.len() - 1].join("\n");
        match read_dataset(truncated.as_bytes()) {
            Err(Error::Format { line, .. }) => assert!(line > 0),
            other => panic!("expected format error, got {other:?}"),
        }
        // cut mid-row
        let half = &text[..text.len() - 20];
        assert!(read_dataset(half.as_bytes()).is_err());
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let bad = "# mspr-dataset v1\nenv=pointmaze_medium\nmode=navigate\nsigma=0\nseed=0\nexpert=v1\n\
                   traj_id,t,s_0,s_1,a_0,a_1,last\n0,0,1.5,1.5,oops,0,0\n";
        match read_dataset(bad.as_bytes()) {
            Err(Error::Format { line: 8, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_dataset("nope\n".as_bytes()).is_err());
    }
}
