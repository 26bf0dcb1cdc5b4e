//! Where `read`, `sweep`, `bill`, `history` and `meters` get answered: a
//! remote service, or a simulation embedded in this process.

use amr_core::billing::Tariff;
use amr_core::headend::BillRequestError;
use amr_core::system::{System, SystemError};
use amr_server::payload::*;
use amr_server::{ApiError, SimFailure};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{load_scenario, open_store, resolve_tariff, Failure, Rendered, TargetArgs};

pub enum Backend {
    Remote(Remote),
    Embedded(Box<Embedded>),
}

pub struct Remote {
    base: String,
    http: reqwest::blocking::Client,
}

pub struct Embedded {
    system: System,
    tariff: Tariff,
}

/// Same code and message the service would send for this failure.
fn local(f: SimFailure) -> Failure {
    let e = ApiError::from(f);
    Failure::new(e.code, e.message)
}

fn system_failure(e: SystemError) -> Failure {
    match e {
        SystemError::Read(r) => local(r.into()),
        SystemError::Sweep(s) => local(s.into()),
        SystemError::Sim(s) => Failure::runtime(s.to_string()),
    }
}

impl Backend {
    pub fn connect(t: &TargetArgs) -> Result<Self, Failure> {
        if let Some(server) = &t.server {
            if t.overrides.any() {
                return Err(Failure::invalid("--seed, --link, --loss and --meters need --scenario"));
            }
            let http = reqwest::blocking::Client::builder()
                .connect_timeout(std::time::Duration::from_secs(5))
                .timeout(None)
                .build()
                .map_err(|e| Failure::runtime(e.to_string()))?;
            return Ok(Self::Remote(Remote {
                base: server.trim_end_matches('/').to_string(),
                http,
            }));
        }
        let path = t.scenario.as_ref().expect("clap requires --server or --scenario");
        let sc = load_scenario(path, &t.overrides)?;
        let tariff = resolve_tariff(t.tariff.as_deref(), &sc)?;
        let store = open_store(t.store.as_deref())?;
        let mut config = sc
            .system_config(false)
            .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
        // A one-off command models the operator acting once: the scenario's
        // sweep schedule and scripted faults belong to `simulate` and `serve`.
        config.sweeps = Default::default();
        config.faults.clear();
        Ok(Self::Embedded(Box::new(Embedded {
            system: System::new(config, store),
            tariff,
        })))
    }

    /// Flushes the embedded store.
    pub fn close(&mut self) -> Result<(), Failure> {
        match self {
            Self::Remote(_) => Ok(()),
            Self::Embedded(e) => e
                .system
                .headend_mut()
                .store_mut()
                .flush()
                .map_err(|e| Failure::runtime(e.to_string())),
        }
    }

    pub fn advance(&mut self, seconds: f64) -> Result<AdvanceResponse, Failure> {
        if !(seconds.is_finite() && seconds >= 0.0) {
            return Err(Failure::invalid(format!(
                "--advance must be finite and >= 0, got {seconds}"
            )));
        }
        match self {
            Self::Remote(r) => r.post("/api/advance", Some(&AdvanceRequest { seconds })),
            Self::Embedded(e) => {
                let t = e.system.now() + seconds;
                e.system.run_until(t).map_err(|x| Failure::runtime(x.to_string()))?;
                Ok(AdvanceResponse {
                    sim_time: e.system.now(),
                })
            }
        }
    }

    pub fn meters(&mut self) -> Result<Rendered, Failure> {
        let r: MetersResponse = match self {
            Self::Remote(r) => r.get("/api/meters", &[])?,
            Self::Embedded(e) => MetersResponse {
                meters: e.system.headend().meters(),
            },
        };
        Ok(Rendered::of(&r))
    }

    pub fn read(&mut self, address: u32) -> Result<Rendered, Failure> {
        let r: ReadResponse = match self {
            Self::Remote(r) => r.post(&format!("/api/meters/{address}/read"), None::<&()>)?,
            Self::Embedded(e) => ReadResponse {
                record: e.system.on_demand_read(address).map_err(system_failure)?,
            },
        };
        Ok(Rendered::of(&r))
    }

    pub fn sweep(&mut self, addresses: Option<Vec<u32>>) -> Result<Rendered, Failure> {
        let r: SweepResponse = match self {
            Self::Remote(r) => r.post("/api/sweep", Some(&SweepRequest { addresses }))?,
            Self::Embedded(e) => SweepResponse {
                report: e.system.sweep(addresses.as_deref()).map_err(system_failure)?,
            },
        };
        Ok(Rendered::of(&r))
    }

    pub fn bill(&mut self, address: u32, t_start: f64, t_end: f64) -> Result<BillResponse, Failure> {
        match self {
            Self::Remote(r) => r.post(
                &format!("/api/meters/{address}/bill"),
                Some(&BillRequest { t_start, t_end }),
            ),
            Self::Embedded(e) => {
                if !e.system.headend().is_registered(address) {
                    return Err(local(SimFailure::NotRegistered(address)));
                }
                let tariff = e.tariff.clone();
                match e.system.headend_mut().bill(address, t_start, t_end, &tariff) {
                    Ok(bill) => Ok(BillResponse { bill }),
                    Err(BillRequestError::Billing(b)) => Err(local(b.into())),
                    Err(BillRequestError::Store(s)) => Err(Failure::runtime(s.to_string())),
                }
            }
        }
    }

    pub fn history(&mut self, address: u32, from: Option<f64>, to: Option<f64>) -> Result<Rendered, Failure> {
        let r: HistoryResponse = match self {
            Self::Remote(r) => {
                let mut q = Vec::new();
                if let Some(f) = from {
                    q.push(("from", f.to_string()));
                }
                if let Some(t) = to {
                    q.push(("to", t.to_string()));
                }
                r.get(&format!("/api/meters/{address}/history"), &q)?
            }
            Self::Embedded(e) => {
                let store = e.system.headend().store();
                if !e.system.headend().is_registered(address) && store.history(address).is_empty() {
                    return Err(local(SimFailure::NotRegistered(address)));
                }
                let (lo, hi) = (from.unwrap_or(f64::NEG_INFINITY), to.unwrap_or(f64::INFINITY));
                if lo.is_nan() || hi.is_nan() || lo > hi {
                    return Err(Failure::new("BAD_REQUEST", format!("bad time range from={lo} to={hi}")));
                }
                HistoryResponse {
                    address,
                    records: store.query_history(address, lo, hi).to_vec(),
                }
            }
        };
        Ok(Rendered::of(&r))
    }
}

impl Remote {
    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T, Failure> {
        self.finish(self.http.get(self.url(path)).query(query))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<T, Failure> {
        let mut req = self.http.post(self.url(path));
        if let Some(b) = body {
            req = req.json(b);
        }
        self.finish(req)
    }

    fn finish<T: DeserializeOwned>(&self, req: reqwest::blocking::RequestBuilder) -> Result<T, Failure> {
        let resp = req.send().map_err(|e| {
            Failure::new(
                "SERVER_UNAVAILABLE",
                format!("cannot reach the service at {}: {e}", self.base),
            )
        })?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .map_err(|e| Failure::runtime(format!("reading the reply from {}: {e}", self.base)))?;
        if status.is_success() {
            return serde_json::from_slice(&bytes)
                .map_err(|e| Failure::runtime(format!("unexpected reply from {}: {e}", self.base)));
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(b) => Err(Failure::with_id(&b.error.code, b.error.message, b.error.correlation_id)),
            Err(_) => Err(Failure::runtime(format!(
                "{} answered {status}: {}",
                self.base,
                String::from_utf8_lossy(&bytes)
            ))),
        }
    }
}
