use std::collections::HashMap;
use std::io::Read;

use serde::Deserialize;

use super::{EngineError, HeartRateSample};
use crate::ids::{Timestamp, UserId};

#[derive(Deserialize)]
struct Row {
    user_id: UserId,
    timestamp: Timestamp,
    bpm: f64,
}

/// Reads `user_id,timestamp,bpm` CSV, enforcing the plausibility gate and
/// strictly increasing timestamps per user.
pub fn read_heart_rate_csv<R: Read>(reader: R) -> Result<Vec<HeartRateSample>, EngineError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| EngineError::Csv(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["user_id", "timestamp", "bpm"] {
        return Err(EngineError::Csv(format!(
            "expected header user_id,timestamp,bpm, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut last: HashMap<UserId, Timestamp> = HashMap::new();
    let mut out = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| EngineError::Csv(e.to_string()))?;
        if let Some(&previous) = last.get(&row.user_id) {
            if row.timestamp <= previous {
                return Err(EngineError::NonMonotonicTimestamp {
                    user_id: row.user_id,
                    previous,
                    timestamp: row.timestamp,
                });
            }
        }
        last.insert(row.user_id.clone(), row.timestamp);
        out.push(HeartRateSample::new(row.user_id, row.timestamp, row.bpm)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rows() {
        let csv = "user_id,timestamp,bpm\nalice,1,61.5\nbob,1,70\nalice,2,62\n";
        let s = read_heart_rate_csv(csv.as_bytes()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].bpm, 61.5);
        assert_eq!(s[1].user_id.as_str(), "bob");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            read_heart_rate_csv("ts,bpm\n1,2\n".as_bytes()),
            Err(EngineError::Csv(_))
        ));
        assert!(matches!(
            read_heart_rate_csv("user_id,timestamp,bpm\na,2,60\na,2,61\n".as_bytes()),
            Err(EngineError::NonMonotonicTimestamp { .. })
        ));
        assert!(matches!(
            read_heart_rate_csv("user_id,timestamp,bpm\na,2,260\n".as_bytes()),
            Err(EngineError::ImplausibleSample { .. })
        ));
        assert!(matches!(
            read_heart_rate_csv("user_id,timestamp,bpm\na,x,60\n".as_bytes()),
            Err(EngineError::Csv(_))
        ));
    }
}
