use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use chrono::NaiveDate;

use super::{PriceSeries, Universe, MACRO_PREFIX};
use crate::error::{Error, Result};

const HEADER: [&str; 3] = ["date", "asset_id", "close"];

/// Reads `date,asset_id,close` rows into an aligned universe. Row numbers in
/// errors are file line numbers (the header is line 1). Asset ids starting
/// with `^` become macro channels.
pub fn ingest_csv<R: Read>(source: R) -> Result<Universe> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader.headers().map_err(|e| Error::Ingest {
        row: 1,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Ingest {
            row: 1,
            message: format!("expected header `date,asset_id,close`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, BTreeMap<NaiveDate, f64>> = HashMap::new();
    let mut all_dates = BTreeSet::new();

    for record in reader.records() {
        let record = record.map_err(|e| Error::Ingest {
            row: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Ingest { row, message };
        if record.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", record.len())));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| bad(format!("unparsable date `{}`: {e}", &record[0])))?;
        let asset = record[1].to_string();
        if asset.is_empty() {
            return Err(bad("empty asset_id".into()));
        }
        let close: f64 = record[2]
            .parse()
            .map_err(|_| bad(format!("unparsable close `{}`", &record[2])))?;
        if !(close.is_finite() && close > 0.0) {
            return Err(bad(format!("close {close} is not strictly positive")));
        }
        let series = rows.entry(asset.clone()).or_insert_with(|| {
            order.push(asset.clone());
            BTreeMap::new()
        });
        if series.insert(date, close).is_some() {
            return Err(bad(format!("duplicate row for ({date}, {asset})")));
        }
        all_dates.insert(date);
    }
    if order.is_empty() {
        return Err(Error::Empty("price CSV has no rows"));
    }

    for date in &all_dates {
        for asset in &order {
            if !rows[asset].contains_key(date) {
                return Err(Error::Alignment {
                    date: date.to_string(),
                    asset: asset.clone(),
                });
            }
        }
    }

    let dates: Vec<NaiveDate> = all_dates.into_iter().collect();
    let mut assets = Vec::new();
    let mut macros = Vec::new();
    for id in order {
        let closes: Vec<f64> = rows[&id].values().copied().collect();
        let series = PriceSeries::new(id.clone(), closes)?;
        if id.starts_with(MACRO_PREFIX) {
            macros.push(series);
        } else {
            assets.push(series);
        }
    }
    Universe::new(dates, assets, macros)
}

/// Writes the universe in the ingestion format, date-major, assets before
/// macro channels. Closes use the shortest round-trip representation.
pub fn write_csv<W: Write>(universe: &Universe, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(HEADER).map_err(io)?;
    for (t, date) in universe.dates.iter().enumerate() {
        let d = date.format("%Y-%m-%d").to_string();
        for s in universe.assets.iter().chain(&universe.macros) {
            w.write_record([d.as_str(), s.asset_id.as_str(), &s.closes[t].to_string()])
                .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_assets_three_dates() {
        let csv = "date,asset_id,close\n\
                   2024-01-03,B,20\n2024-01-02,A,10\n2024-01-02,B,19\n\
                   2024-01-03,A,11\n2024-01-04,A,12\n2024-01-04,B,21\n";
        let u = ingest_csv(csv.as_bytes()).unwrap();
        assert_eq!(u.n_assets(), 2);
        assert_eq!(u.assets[0].asset_id, "B");
        assert_eq!(u.assets[0].closes, vec![19.0, 20.0, 21.0]);
        assert_eq!(u.assets[1].closes, vec![10.0, 11.0, 12.0]);
        assert_eq!(u.len(), 3);
    }

    #[test]
    fn negative_close_cites_row() {
        let csv = "date,asset_id,close\n2024-01-02,A,10\n2024-01-03,A,11\n2024-01-04,A,-5\n";
        match ingest_csv(csv.as_bytes()) {
            Err(Error::Ingest { row, message }) => {
                assert_eq!(row, 4);
                assert!(message.contains("-5"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_unparsable_rows() {
        let dup = "date,asset_id,close\n2024-01-02,A,10\n2024-01-02,A,11\n";
        assert!(matches!(ingest_csv(dup.as_bytes()), Err(Error::Ingest { row: 3, .. })));
        let bad = "date,asset_id,close\n2024-01-02,A,ten\n";
        assert!(matches!(ingest_csv(bad.as_bytes()), Err(Error::Ingest { row: 2, .. })));
        let bad_date = "date,asset_id,close\n01/02/2024,A,10\n";
        assert!(matches!(ingest_csv(bad_date.as_bytes()), Err(Error::Ingest { row: 2, .. })));
        let header = "day,asset,close\n2024-01-02,A,10\n";
        assert!(matches!(ingest_csv(header.as_bytes()), Err(Error::Ingest { row: 1, .. })));
    }

    #[test]
    fn misaligned_dates_name_the_gap() {
        let mut csv = String::from("date,asset_id,close\n");
        for d in 2..=6 {
            csv.push_str(&format!("2024-01-0{d},A,10\n"));
            if d != 4 {
                csv.push_str(&format!("2024-01-0{d},B,10\n"));
            }
        }
        match ingest_csv(csv.as_bytes()) {
            Err(Error::Alignment { date, asset }) => {
                assert_eq!(date, "2024-01-04");
                assert_eq!(asset, "B");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn macro_columns_are_split_out() {
        let csv = "date,asset_id,close\n2024-01-02,A,10\n2024-01-02,^VIX,15\n2024-01-03,A,11\n2024-01-03,^VIX,16\n";
        let u = ingest_csv(csv.as_bytes()).unwrap();
        assert_eq!(u.n_assets(), 1);
        assert_eq!(u.macros.len(), 1);
        assert_eq!(u.macro_len(), 2);
    }

    #[test]
    fn export_then_ingest_roundtrips() {
        let u = Universe::from_closes(vec![
            ("X".into(), vec![100.0, 100.1 / 3.0, 1e-3]),
            ("Y".into(), vec![5.0, 6.0, 7.25]),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&u, &mut buf).unwrap();
        let back = ingest_csv(buf.as_slice()).unwrap();
        assert_eq!(back, u);
    }
}
