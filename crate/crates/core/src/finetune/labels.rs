//! Expert labels: CSV `route_id,points[,step_points]`, step points
//! `|`-separated.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::FinetuneError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertLabel {
    pub route_id: String,
    pub points: u8,
    /// One entry per reaction, in tie-break key order.
    pub step_points: Option<Vec<u8>>,
}

impl ExpertLabel {
    pub fn check(&self) -> Result<(), FinetuneError> {
        let ok = |p: u8| (1..=5).contains(&p);
        if !ok(self.points) {
            return Err(FinetuneError::Label(format!(
                "{}: points {} outside 1..=5",
                self.route_id, self.points
            )));
        }
        if let Some(steps) = &self.step_points {
            if steps.is_empty() || !steps.iter().all(|&p| ok(p)) {
                return Err(FinetuneError::Label(format!(
                    "{}: step points must be in 1..=5",
                    self.route_id
                )));
            }
        }
        Ok(())
    }
}

fn parse_points(text: &str, route_id: &str) -> Result<u8, FinetuneError> {
    text.trim()
        .parse::<u8>()
        .map_err(|_| FinetuneError::Label(format!("{route_id}: bad points '{text}'")))
}

pub fn parse_labels_csv<R: Read>(reader: R) -> Result<Vec<ExpertLabel>, FinetuneError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| FinetuneError::Label(e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 2
        || names[0] != "route_id"
        || names[1] != "points"
        || names.get(2).is_some_and(|h| *h != "step_points")
    {
        return Err(FinetuneError::Label(format!(
            "expected header route_id,points[,step_points], got {}",
            names.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| FinetuneError::Label(format!("row {}: {e}", line + 1)))?;
        let route_id = record.get(0).unwrap_or_default().to_string();
        let points = parse_points(record.get(1).unwrap_or_default(), &route_id)?;
        let step_points = match record.get(2).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => Some(
                s.split('|')
                    .map(|p| parse_points(p, &route_id))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let label = ExpertLabel {
            route_id,
            points,
            step_points,
        };
        label.check()?;
        out.push(label);
    }
    Ok(out)
}

pub fn write_labels_csv(labels: &[ExpertLabel]) -> String {
    let mut out = String::from("route_id,points,step_points\n");
    for l in labels {
        let steps = l
            .step_points
            .as_ref()
            .map(|s| s.iter().map(u8::to_string).collect::<Vec<_>>().join("|"))
            .unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", l.route_id, l.points, steps));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let labels = vec![
            ExpertLabel {
                route_id: "m#0".into(),
                points: 3,
                step_points: Some(vec![5, 3, 4]),
            },
            ExpertLabel {
                route_id: "m#1".into(),
                points: 5,
                step_points: None,
            },
        ];
        let text = write_labels_csv(&labels);
        assert_eq!(parse_labels_csv(text.as_bytes()).unwrap(), labels);
    }

    #[test]
    fn two_column_file() {
        let labels = parse_labels_csv("route_id,points\na,1\nb,4\n".as_bytes()).unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels[1].points, 4);
        assert!(labels[1].step_points.is_none());
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(parse_labels_csv("route_id,points\na,6\n".as_bytes()).is_err());
        assert!(parse_labels_csv("route_id,points\na,x\n".as_bytes()).is_err());
        assert!(parse_labels_csv("route_id,points,step_points\na,3,3|0\n".as_bytes()).is_err());
        assert!(parse_labels_csv("id,points\na,3\n".as_bytes()).is_err());
    }
}
