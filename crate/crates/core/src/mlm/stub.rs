//! Local stand-in for a model endpoint, answering with the scripted backend.

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::Value;

use super::http::{
    extract_input, ActCall, CritiqueCall, CurriculumCall, LlmRequest, LlmResponse, Role,
    SubcommandCall, SubtaskCall, SummarizeCall,
};
use super::scripted::ScriptedBackend;
use super::{
    Actor, Critic, Curriculum, DescribeInput, Deployer, Describer, PlanRequest, Planner,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubMode {
    Faithful,
    /// Answer the first `n` requests with unparseable output.
    MalformedFirst(u64),
    AlwaysMalformed,
}

pub struct StubServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    worker: Option<JoinHandle<()>>,
    served: Arc<AtomicU64>,
}

fn parse<T: serde::de::DeserializeOwned>(input: &str) -> Result<T, String> {
    serde_json::from_str(input).map_err(|e| e.to_string())
}

/// Run one role on a JSON input.
pub fn answer(backend: &ScriptedBackend, role: Role, input: &str) -> Result<Value, String> {
    let to_value = |r: Result<_, super::BackendError>| -> Result<Value, String> {
        r.map_err(|e| e.to_string())
    };
    let out = match role {
        Role::Planner => to_value(
            backend
                .plan_subgoals(&parse::<PlanRequest>(input)?)
                .map(|p| serde_json::to_value(p).expect("plan serializes")),
        )?,
        Role::Describer => {
            to_value(backend.describe(&parse::<DescribeInput>(input)?).map(Value::String))?
        }
        Role::Summarizer => {
            let c: SummarizeCall = parse(input)?;
            to_value(backend.summarize(c.prior.as_deref(), &c.items).map(Value::String))?
        }
        Role::DeployerSubtask => {
            let c: SubtaskCall = parse(input)?;
            let d = backend
                .deploy_subtask(&c.info, &c.subgoal, &c.strategy)
                .map_err(|e| e.to_string())?;
            serde_json::to_value(d).expect("directive serializes")
        }
        Role::DeployerSubcommand => {
            let c: SubcommandCall = parse(input)?;
            let d = backend
                .deploy_subcommand(&c.task, c.position)
                .map_err(|e| e.to_string())?;
            serde_json::to_value(d).expect("command serializes")
        }
        Role::CriticManager | Role::CriticConductor => {
            let c: CritiqueCall = parse(input)?;
            let v = backend
                .critique(&c.subject, &c.history)
                .map_err(|e| e.to_string())?;
            serde_json::to_value(v).expect("critique serializes")
        }
        Role::Actor => {
            let c: ActCall = parse(input)?;
            let a = backend
                .act(&c.command, c.cursor, &c.observation, &c.skills)
                .map_err(|e| e.to_string())?;
            serde_json::to_value(a).expect("act serializes")
        }
        Role::Curriculum => {
            let c: CurriculumCall = parse(input)?;
            to_value(backend.propose_next_task(&c.log, &c.map).map(Value::String))?
        }
    };
    Ok(out)
}

fn respond(backend: &ScriptedBackend, body: &str, malformed: bool) -> (u16, String) {
    if malformed {
        return (200, "{\"output\": <<not json>>".to_string());
    }
    let req: LlmRequest = match serde_json::from_str(body) {
        Ok(r) => r,
        Err(e) => return (400, format!("bad request: {e}")),
    };
    let Some(role) = Role::from_name(&req.role) else {
        return (400, format!("unknown role {}", req.role));
    };
    let Some(input) = extract_input(&req.prompt) else {
        return (400, "prompt carries no input".to_string());
    };
    match answer(backend, role, input) {
        Ok(output) => (
            200,
            serde_json::to_string(&LlmResponse { output }).expect("response serializes"),
        ),
        Err(e) => (422, e),
    }
}

impl StubServer {
    /// Listen on `127.0.0.1:port` (0 picks a free port) and serve in the
    /// background until dropped.
    pub fn start(port: u16, mode: StubMode) -> io::Result<Self> {
        let server = tiny_http::Server::http(("127.0.0.1", port))
            .map_err(|e| io::Error::new(io::ErrorKind::AddrInUse, e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("not an IP listener"))?;
        let server = Arc::new(server);
        let served = Arc::new(AtomicU64::new(0));
        let worker = {
            let server = Arc::clone(&server);
            let served = Arc::clone(&served);
            std::thread::spawn(move || {
                let backend = ScriptedBackend::default();
                for mut request in server.incoming_requests() {
                    let n = served.fetch_add(1, Ordering::SeqCst);
                    let malformed = match mode {
                        StubMode::Faithful => false,
                        StubMode::MalformedFirst(k) => n < k,
                        StubMode::AlwaysMalformed => true,
                    };
                    let mut body = String::new();
                    let (code, text) = match request.as_reader().read_to_string(&mut body) {
                        Ok(_) => respond(&backend, &body, malformed),
                        Err(e) => (400, e.to_string()),
                    };
                    let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
                        .expect("static header");
                    let _ = request.respond(
                        tiny_http::Response::from_string(text)
                            .with_status_code(code)
                            .with_header(header),
                    );
                }
            })
        };
        Ok(Self {
            addr,
            server,
            worker: Some(worker),
            served,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}/v1/complete", self.addr)
    }

    /// Requests received so far.
    pub fn served(&self) -> u64 {
        self.served.load(Ordering::SeqCst)
    }

    /// Block the calling thread for the lifetime of the server.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
