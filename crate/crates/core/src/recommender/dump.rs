//! Text dump of a trained model: one tab-separated record per line, a
//! record name first. Ids are JSON string literals; floats use Rust's
//! shortest round-trip formatting, so dump → load is bit-exact.
//!
//! ```text
//! cars-model	1
//! hyper	factors	2
//! mu	3.25
//! user	"alice"	0.1	0.003	-0.002
//! turk	"bob"	-0.2	0.001	0.004
//! context	"time:morning"	0.05
//! loss	12.5	11.9
//! ```

use std::fmt::Write as _;

use super::{CarsModel, ContextFeature, Hyperparams, RecommenderError, Vocab};

const MAGIC: &str = "cars-model";
const VERSION: &str = "1";

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

impl CarsModel {
    pub fn to_dump(&self) -> String {
        let f = self.hyper.factors;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}\t{VERSION}");
        let h = &self.hyper;
        let _ = writeln!(out, "hyper\tfactors\t{}", h.factors);
        let _ = writeln!(out, "hyper\tlearning_rate\t{}", h.learning_rate);
        let _ = writeln!(out, "hyper\tregularization\t{}", h.regularization);
        let _ = writeln!(out, "hyper\tepochs\t{}", h.epochs);
        let _ = writeln!(out, "hyper\tinit_scale\t{}", h.init_scale);
        let _ = writeln!(out, "mu\t{}", self.mu);
        let rows = |out: &mut String, tag: &str, names: &[String], bias: &[f64], fac: &[f64]| {
            for (i, name) in names.iter().enumerate() {
                let _ = write!(out, "{tag}\t{}\t{}", quote(name), bias[i]);
                for x in &fac[i * f..(i + 1) * f] {
                    let _ = write!(out, "\t{x}");
                }
                out.push('\n');
            }
        };
        rows(
            &mut out,
            "user",
            self.users.names(),
            &self.user_bias,
            &self.user_factors,
        );
        rows(
            &mut out,
            "turk",
            self.turks.names(),
            &self.turk_bias,
            &self.turk_factors,
        );
        for (i, feat) in self.contexts.names().iter().enumerate() {
            let _ = writeln!(
                out,
                "context\t{}\t{}",
                quote(&feat.to_string()),
                self.context_bias[i]
            );
        }
        out.push_str("loss");
        for l in &self.loss_history {
            let _ = write!(out, "\t{l}");
        }
        out.push('\n');
        out
    }

    pub fn from_dump(text: &str) -> Result<Self, RecommenderError> {
        let mut hyper = Hyperparams {
            factors: 0,
            learning_rate: 0.0,
            regularization: 0.0,
            epochs: 0,
            init_scale: 0.0,
        };
        let mut model = CarsModel {
            hyper,
            mu: f64::NAN,
            users: Vocab::default(),
            turks: Vocab::default(),
            contexts: Vocab::default(),
            user_bias: Vec::new(),
            turk_bias: Vec::new(),
            context_bias: Vec::new(),
            user_factors: Vec::new(),
            turk_factors: Vec::new(),
            loss_history: Vec::new(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == format!("{MAGIC}\t{VERSION}") => {}
            _ => {
                return Err(RecommenderError::BadDump {
                    line: 1,
                    reason: "missing header".into(),
                })
            }
        }
        for (n, line) in lines {
            let bad = |reason: String| RecommenderError::BadDump {
                line: n + 1,
                reason,
            };
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            let name =
                |s: &str| serde_json::from_str::<String>(s).map_err(|e| bad(format!("{s:?}: {e}")));
            match fields[0] {
                "hyper" if fields.len() == 3 => {
                    let v = fields[2];
                    match fields[1] {
                        "factors" => {
                            hyper.factors = v.parse().map_err(|_| bad("factors".into()))?
                        }
                        "epochs" => hyper.epochs = v.parse().map_err(|_| bad("epochs".into()))?,
                        "learning_rate" => hyper.learning_rate = num(v)?,
                        "regularization" => hyper.regularization = num(v)?,
                        "init_scale" => hyper.init_scale = num(v)?,
                        other => return Err(bad(format!("unknown hyperparameter {other}"))),
                    }
                    model.hyper = hyper;
                }
                "mu" if fields.len() == 2 => model.mu = num(fields[1])?,
                tag @ ("user" | "turk") => {
                    let f = model.hyper.factors;
                    if fields.len() != 3 + f {
                        return Err(bad(format!("expected {} fields", 3 + f)));
                    }
                    let id = name(fields[1])?;
                    let (vocab, bias, fac) = if tag == "user" {
                        (
                            &mut model.users,
                            &mut model.user_bias,
                            &mut model.user_factors,
                        )
                    } else {
                        (
                            &mut model.turks,
                            &mut model.turk_bias,
                            &mut model.turk_factors,
                        )
                    };
                    if vocab.get(&id).is_some() {
                        return Err(bad(format!("duplicate {tag} {id}")));
                    }
                    vocab.intern(&id);
                    bias.push(num(fields[2])?);
                    for x in &fields[3..] {
                        fac.push(num(x)?);
                    }
                }
                "context" if fields.len() == 3 => {
                    let feat: ContextFeature = name(fields[1])?.parse().map_err(bad)?;
                    model.contexts.intern(&feat);
                    model.context_bias.push(num(fields[2])?);
                }
                "loss" => {
                    for x in &fields[1..] {
                        model.loss_history.push(num(x)?);
                    }
                }
                other => return Err(bad(format!("unexpected record {other:?}"))),
            }
        }
        if model.mu.is_nan() {
            return Err(RecommenderError::BadDump {
                line: 0,
                reason: "missing mu".into(),
            });
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let rs: Vec<RatingRecord> = (0..40)
            .map(|i| RatingRecord {
                user_id: format!("user {}\t\"x\"", i % 5),
                turk_id: format!("t{}", i % 6),
                context: ContextVector {
                    time_bucket: TimeBucket::from_hour(i * 3),
                    location_cell: (i % 4) as u64,
                    skill_domain: "repair".into(),
                },
                rating: 1.0 + (i % 5) as f64 * 0.9,
                at: i as i64,
            })
            .collect();
        let m = train(&rs, &Hyperparams::default(), 77).unwrap();
        let text = m.to_dump();
        let back = CarsModel::from_dump(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_dump(), text);
        for (a, b) in back.parameters().iter().zip(m.parameters()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(CarsModel::from_dump("nope").is_err());
        assert!(CarsModel::from_dump("cars-model\t1\nmu\tabc\n").is_err());
        assert!(CarsModel::from_dump(
            "cars-model\t1\nhyper\tfactors\t1\nmu\t3\nuser\t\"a\"\t0.1\n"
        )
        .is_err());
    }
}
