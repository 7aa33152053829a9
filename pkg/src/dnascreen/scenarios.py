"""World building, the line-oriented scenario script, and honest scenarios.

A world is one synthesizer S, keyservers K1..Kn, the hashed database H, and
the authentication backend A, wired up with fresh hierarchies, a shared
DOPRF key split (t, n), and a deterministic clock. Scenario scripts drive
queries and adversary actions; every scenario declares its assertions and
ships its transcript.
"""

from dataclasses import dataclass, field, replace

from . import pki
from .closure import secrecy_probe
from .crypto import SigningKey, get_backend
from .channel import issue_tls_identity
from .doprf import share_key
from .errors import ScreeningError, ScriptError
from .scep import SCEP, VARIANTS, ScepServerConfig
from .screening import (
    AuthBackendRole,
    HashedDbRole,
    KeyserverRole,
    QueryResponse,
    SynthesizerConfig,
    SynthesizerRole,
    build_hdb,
    hashed_seq_label,
    oracle_query,
    totp_code,
)
from .simnet import Selector, SimNetwork, TapRule

VALIDITY_YEARS = 10

DEFAULT_HAZARDS = [
    (b"TTGACGGCTAGCTCAGTCCTAGGTACAGTG", "toxin-alpha",
     "encodes a potent cytotoxin subunit"),
    (b"GGTCTATATAATCCTAGCTCAGTCGGTAGA", "agent-k12",
     "capsid fragment of a restricted agent"),
    (b"CACCATACGGAAACCTTCGGGTTCCATGCC", "neuro-gamma",
     "neurotoxic peptide precursor"),
]

CLEAN_SEQUENCES = [
    b"ATGGCGATTGCAATCGGCACTGGCTGGTCC",
    b"CGGAATTCGCGGCCGCTTCTAGAGGGCCCA",
    b"GCTTGGATCCTCTGCAGAAGCTTGAGCTCG",
]


@dataclass
class ScenarioConfig:
    backend_name: str = "test"
    scep_variant: str = SCEP
    resumption: bool = False
    bind_responses: bool = False
    rate_limit: int = 100
    threshold: int = 2
    n_keyservers: int = 3
    hazards: list = field(default_factory=lambda: list(DEFAULT_HAZARDS))
    elt_sequences: tuple = ()
    corrupt: dict = field(default_factory=dict)  # role name -> strategy name
    include_hazard_info: bool = True
    max_sequence_len: int = 30

    def validate(self):
        if self.scep_variant not in VARIANTS:
            raise ScriptError(f"unknown SCEP variant {self.scep_variant!r}")
        if not 1 <= self.threshold <= self.n_keyservers:
            raise ScriptError("threshold must be within the keyserver count")


@dataclass
class Assertion:
    id: str
    passed: bool
    evidence: str = ""


@dataclass
class ScenarioOutcome:
    name: str
    assertions: list
    token: str = ""

    @property
    def ok(self) -> bool:
        return all(a.passed for a in self.assertions)

    def render(self) -> str:
        lines = [f"scenario: {self.name}"]
        for a in self.assertions:
            mark = "PASS" if a.passed else "FAIL"
            lines.append(f"  [{mark}] {a.id}" +
                         (f" :: {a.evidence}" if a.evidence else ""))
        return "\n".join(lines)


@dataclass
class ScenarioResult:
    name: str
    world: "World"
    outcome: ScenarioOutcome
    transcript_text: str


class World:
    """All the roles plus the out-of-band facts the oracles need."""

    def __init__(self, config: ScenarioConfig, net: SimNetwork):
        self.config = config
        self.net = net
        self.backend = get_backend(config.backend_name)
        rng = net.rng
        end = net.clock + VALIDITY_YEARS * 365 * 86400
        start = net.clock - 3600

        # Channel CA and TLS identities for every server role.
        self.channel_ca = SigningKey.generate(rng)
        ca_pub = self.channel_ca.verify_key

        # Manufacturer hierarchy; the synthesizer mints its own token.
        m_root, m_root_key = pki.create_root(
            pki.MANUFACTURER, pki.Identity("F", "root@screening"), rng,
            start, end)
        mi_key = SigningKey.generate(rng)
        m_inter = pki.issue_certificate(
            m_root, m_root_key, pki.Identity("M-intermediate"),
            mi_key.verify_key, pki.INTERMEDIATE, start, end, rng)
        self.m_leaf_key = SigningKey.generate(rng)
        m_leaf = pki.issue_certificate(
            m_inter, mi_key, pki.Identity("M-leaf"),
            self.m_leaf_key.verify_key, pki.LEAF, start, end, rng)
        self.m_root, self.m_path = m_root, (m_leaf, m_inter, m_root)

        # Infrastructure hierarchy for keyservers and the database.
        i_root, i_root_key = pki.create_root(
            pki.INFRASTRUCTURE, pki.Identity("F", "root@screening"), rng,
            start, end)
        ii_key = SigningKey.generate(rng)
        i_inter = pki.issue_certificate(
            i_root, i_root_key, pki.Identity("I-intermediate"),
            ii_key.verify_key, pki.INTERMEDIATE, start, end, rng)
        self.i_leaf_key = SigningKey.generate(rng)
        i_leaf = pki.issue_certificate(
            i_inter, ii_key, pki.Identity("I-leaf"),
            self.i_leaf_key.verify_key, pki.LEAF, start, end, rng)
        self.i_root, self.i_path = i_root, (i_leaf, i_inter, i_root)

        # Exemption hierarchy; the ELT belongs to customer C1.
        e_root, e_root_key = pki.create_root(
            pki.EXEMPTION, pki.Identity("F", "root@screening"), rng,
            start, end)
        ei_key = SigningKey.generate(rng)
        e_inter = pki.issue_certificate(
            e_root, e_root_key, pki.Identity("E-intermediate"),
            ei_key.verify_key, pki.INTERMEDIATE, start, end, rng)
        self.e_leaf_key = SigningKey.generate(rng)
        e_leaf = pki.issue_certificate(
            e_inter, ei_key, pki.Identity("E-leaf"),
            self.e_leaf_key.verify_key, pki.LEAF, start, end, rng)
        self.e_root, self.e_path = e_root, (e_leaf, e_inter, e_root)

        self.device_id = "authdev-C1"
        self.device_secret = rng.randbytes(16)
        self.elt_chain = None
        self.elt_subtoken_key = None
        if config.elt_sequences:
            self.elt_subtoken_key = SigningKey.generate(rng)
            elt = pki.issue_token(
                e_leaf, self.e_leaf_key, pki.TOKEN_EXEMPTION,
                pki.ExemptionPayload(tuple(config.elt_sequences),
                                     self.device_id,
                                     self.elt_subtoken_key.verify_key),
                pki.Identity("C1", "customer@lab"),
                SigningKey.generate(rng).verify_key, start, end, rng)
            self.elt_chain = pki.CertChain(path=self.e_path, token=elt)

        # One shared DOPRF key; k=1 would put M(s) itself on the wire.
        self.k = self.backend.scalar(
            rng.randrange(2, self.backend.q))
        shares = share_key(self.k, config.n_keyservers, config.threshold, rng)
        self.db = build_hdb(config.hazards, self.k)
        self.hazard_map = {seq: (name, reason)
                           for seq, name, reason in config.hazards}

        # Keyserver roles.
        self.keyserver_names = [f"K{i + 1}" for i in range(config.n_keyservers)]
        self.keyservers = {}
        for idx, name in enumerate(self.keyserver_names):
            ident, static = issue_tls_identity(self.channel_ca, name, rng)
            tok_key = SigningKey.generate(rng)
            token = pki.issue_token(
                i_leaf, self.i_leaf_key, pki.TOKEN_KEYSERVER,
                pki.KeyserverPayload(shares[idx].index), pki.Identity(name),
                tok_key.verify_key, start, end, rng)
            cfg = ScepServerConfig(
                variant=config.scep_variant,
                chain=pki.CertChain(path=self.i_path, token=token),
                signing_key=tok_key, trusted_manufacturer_root=m_root)
            role = KeyserverRole(name, self.backend, ident, static, cfg,
                                 shares[idx], rng,
                                 resumption_allowed=config.resumption)
            self.keyservers[name] = role

        # Hashed database role.
        ident, static = issue_tls_identity(self.channel_ca, "H", rng)
        h_key = SigningKey.generate(rng)
        h_token = pki.issue_token(
            i_leaf, self.i_leaf_key, pki.TOKEN_DATABASE, pki.DatabasePayload(),
            pki.Identity("H"), h_key.verify_key, start, end, rng)
        self.hdb = HashedDbRole(
            "H", self.backend, ident, static,
            ScepServerConfig(variant=config.scep_variant,
                             chain=pki.CertChain(path=self.i_path,
                                                 token=h_token),
                             signing_key=h_key,
                             trusted_manufacturer_root=m_root),
            self.db, rng, exemption_root=e_root,
            auth_backend_name="A", channel_ca_key=ca_pub,
            bind_responses=config.bind_responses,
            include_hazard_info=config.include_hazard_info,
            resumption_allowed=config.resumption)

        # Authentication backend.
        ident, static = issue_tls_identity(self.channel_ca, "A", rng)
        self.auth = AuthBackendRole("A", self.backend, ident, static,
                                    {self.device_id: self.device_secret}, rng)

        # The synthesizer role.
        self.synthesizers = {}
        self.synth = self.add_synthesizer("S", config.rate_limit)

        for role in [*self.keyservers.values(), self.hdb, self.auth]:
            net.register_role(role, corrupt=role.name in config.corrupt)

    def add_synthesizer(self, name: str, rate_limit: int,
                        forced_sigma: bytes | None = None) -> SynthesizerRole:
        rng = self.net.rng
        end = self.net.clock + VALIDITY_YEARS * 365 * 86400
        key = SigningKey.generate(rng)
        token_rng = (_ForcedSigmaRng(rng, forced_sigma)
                     if forced_sigma is not None else rng)
        token = pki.issue_token(
            self.m_path[0], self.m_leaf_key, pki.TOKEN_SYNTHESIZER,
            pki.SynthesizerPayload(name, rate_limit), pki.Identity(name),
            key.verify_key, self.net.clock - 3600, end, token_rng)
        cfg = SynthesizerConfig(
            scep_variant=self.config.scep_variant,
            keyservers=list(self.keyserver_names), hdb="H",
            threshold=self.config.threshold,
            bind_responses=self.config.bind_responses,
            resumption=self.config.resumption,
            max_sequence_len=self.config.max_sequence_len)
        role = SynthesizerRole(name, self.backend,
                               pki.CertChain(path=self.m_path, token=token),
                               key, self.i_root, self.channel_ca.verify_key,
                               cfg, rng)
        role.net = self.net
        self.synthesizers[name] = role
        return role

    # -- conveniences for scenarios --

    def fresh_code(self) -> str:
        return totp_code(self.device_secret, self.net.now())

    def stale_code(self) -> str:
        return totp_code(self.device_secret, self.net.now() - 30)

    def oracle(self, order: list, exempt: tuple = ()) -> QueryResponse:
        return oracle_query(order, self.k, self.db, exempt)

    def register_order_secrets(self, order: list):
        for s in order:
            self.net.add_secret(f"s:{s.hex()[:16]}", "bytes", data=s)
            self.net.add_secret(f"M(s):{s.hex()[:16]}", "element",
                                label=hashed_seq_label(s))


class _ForcedSigmaRng:
    """Feeds one chosen token identifier, then defers to the real rng."""

    def __init__(self, inner, sigma: bytes):
        self.inner = inner
        self.sigma = sigma
        self.used = False

    def randbytes(self, n: int) -> bytes:
        if n == pki.SIGMA_SIZE and not self.used:
            self.used = True
            return self.sigma
        return self.inner.randbytes(n)


def build_world(config: ScenarioConfig, seed: int) -> World:
    config.validate()
    for name in config.corrupt:
        if name not in (["S", "H", "A"]
                        + [f"K{i + 1}" for i in range(config.n_keyservers)]):
            raise ScriptError(f"undeclared role {name!r} marked corrupt")
    net = SimNetwork(seed)
    return World(config, net)


# --- standard assertions -------------------------------------------------------

def secrecy_assertions(world: World, expect_cookie_leak: bool = False) -> list:
    """Order secrecy always holds; cookie secrecy per the scenario's claim.

    The cookies under test are those of honest-server sessions that reached
    Authenticated: a cookie of a failed session protects nothing.
    """
    net = world.net
    out = []
    order_secrets = list(net.secrets)
    results = secrecy_probe(net, world.backend, order_secrets)
    bad = [r for r in results if r.leaked]
    out.append(Assertion(
        "order-secrecy", not bad,
        "; ".join(f"{r.name} leaked via {r.evidence}" for r in bad)
        or f"{len(results)} order secrets stay out of the closure"))

    cookie_secrets = []
    for i, entry in enumerate(net.server_sessions):
        if entry["honest"] and entry["authenticated"]:
            omega = entry["session"].omega
            cookie_secrets.append({
                "name": f"omega:{entry['server']}:{i}", "kind": "bytes",
                "data": omega, "label": "",
            })
    if cookie_secrets:
        results = secrecy_probe(net, world.backend, cookie_secrets)
        leaked = [r for r in results if r.leaked]
        if expect_cookie_leak:
            out.append(Assertion(
                "cookie-leaked-as-predicted", bool(leaked),
                leaked[0].evidence.replace("\n", " | ") if leaked
                else "no authenticated-session cookie in the closure"))
        else:
            out.append(Assertion(
                "cookie-secrecy", not leaked,
                "; ".join(f"{r.name}: {r.evidence}" for r in leaked)
                or f"{len(results)} cookies stay out of the closure"))
    return out


def agreement_assertions(world: World) -> list:
    """Executable agreement check over the session registries.

    Every authenticated honest-server session must be matched by exactly one
    client session agreeing on (client, server, r_S, r_W, omega) - and on
    both tokens under SCEP+.
    """
    net = world.net
    out = []
    for i, entry in enumerate(net.server_sessions):
        if not (entry["honest"] and entry["authenticated"]):
            continue
        sp = entry["session"].params()
        auth = entry["auth"]
        matches = [
            c for c in net.client_sessions
            if c["server"] == entry["server"]
            and c["client"] == auth.client_name
            and c["r_s"] == sp["r_s"] and c["r_w"] == sp["r_w"]
            and c["omega"] == sp["omega"]
            and c["client_token"] == sp["client_token"]
            and c["server_token"] == sp["server_token"]
        ]
        out.append(Assertion(
            f"agreement:{entry['server']}:{i}", len(matches) == 1,
            f"{len(matches)} honest client sessions share these parameters"))
    return out


def key_slot_uniqueness_assertion(world: World) -> Assertion:
    """With resumption off, no two records share (write key, direction, seq)."""
    slots = world.net.record_key_slots()
    dupes = {s for s in slots if slots.count(s) > 1}
    return Assertion(
        "record-slot-uniqueness", not dupes,
        f"duplicated slots: {sorted(dupes)}" if dupes
        else f"{len(slots)} records each own a unique (key, dir, seq) slot")


# --- the scenario script -------------------------------------------------------

def parse_script(text: str) -> list:
    commands = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        commands.append((lineno, parts))
    return commands


def _parse_order(spec: str) -> list:
    try:
        return [bytes.fromhex(h) for h in spec.split(",") if h]
    except ValueError as e:
        raise ScriptError(f"bad sequence hex: {e}") from None


def run_scenario(config: ScenarioConfig, script: str, seed: int,
                 name: str = "scripted") -> ScenarioResult:
    """Parse and execute a line-oriented scenario script deterministically."""
    commands = parse_script(script)

    # corruption must be known before the world is built
    config = replace(config, corrupt=dict(config.corrupt))
    for lineno, parts in commands:
        if parts[0] == "corrupt":
            if len(parts) < 2:
                raise ScriptError(f"line {lineno}: corrupt needs a role")
            config.corrupt[parts[1]] = parts[2] if len(parts) > 2 else "leaky"

    world = build_world(config, seed)
    if config.corrupt:
        from . import attacks  # strategies live with the attack scripts
        attacks.apply_corruption(world)

    assertions = []
    resume_next = set()
    query_no = 0

    for lineno, parts in commands:
        cmd, args = parts[0], parts[1:]
        try:
            if cmd == "corrupt":
                continue  # handled in the pre-pass
            elif cmd == "deliver":
                continue  # the default behaviour, accepted for symmetry
            elif cmd == "advance-clock":
                world.net.advance_clock(int(args[0]))
            elif cmd == "drop":
                world.net.add_tap(TapRule(Selector.parse(args[0]), "drop"))
            elif cmd == "swap":
                a, b = args
                world.net.add_tap(TapRule(Selector.parse(a), "capture",
                                          name=f"swap@{a}"))
                world.net.add_tap(TapRule(Selector.parse(b), "replace",
                                          name=f"swap@{a}"))
            elif cmd == "replace":
                world.net.add_tap(TapRule(Selector.parse(args[0]),
                                          "replace-hex",
                                          data=bytes.fromhex(args[1])))
            elif cmd == "inject":
                world.net.inject(args[0], bytes.fromhex(args[1]))
            elif cmd == "resume-next":
                resume_next.add(args[0])
            elif cmd in ("query", "query-exempt"):
                synth = world.synthesizers.get(args[0])
                if synth is None:
                    raise ScriptError(f"undeclared role {args[0]!r}")
                order = _parse_order(args[1])
                world.register_order_secrets(order)
                resume = args[0] in resume_next
                resume_next.discard(args[0])
                query_no += 1
                qid = f"query-{query_no}"
                if cmd == "query":
                    expected = world.oracle(order)
                    runner = lambda: synth.basic_query(order,
                                                       resume_hdb=resume)
                else:
                    if world.elt_chain is None:
                        raise ScriptError("no exemption token configured")
                    code_arg = args[2] if len(args) > 2 else "code=fresh"
                    code = code_arg.split("=", 1)[1]
                    code = (world.fresh_code() if code == "fresh"
                            else world.stale_code() if code == "stale"
                            else code)
                    expected = world.oracle(order,
                                            tuple(config.elt_sequences))
                    runner = lambda: synth.exemption_query(
                        order, world.elt_chain, code, resume_hdb=resume)
                try:
                    got = runner()
                    assertions.append(Assertion(
                        f"{qid}-matches-oracle",
                        got.overall == expected.overall
                        and got.verdicts == expected.verdicts,
                        f"got {got.overall}, oracle says {expected.overall}"))
                except ScreeningError as err:
                    world.net.note(f"{qid} failed: {type(err).__name__}")
                    assertions.append(Assertion(
                        f"{qid}-matches-oracle", False,
                        f"query raised {type(err).__name__}: {err}"))
            else:
                raise ScriptError(f"unknown command {cmd!r}")
        except ScriptError:
            raise
        except (IndexError, ValueError) as e:
            raise ScriptError(f"line {lineno}: {e}") from None

    assertions += secrecy_assertions(world)
    outcome = ScenarioOutcome(name, assertions)
    return ScenarioResult(name, world, outcome,
                          world.net.transcript.render())


# --- honest scenarios ---------------------------------------------------------

def scenario_honest_basic(seed: int, variant: str = SCEP,
                          backend_name: str = "test") -> ScenarioResult:
    """One hazardous and one clean basic query through honest roles."""
    config = ScenarioConfig(scep_variant=variant, backend_name=backend_name)
    hazardous = DEFAULT_HAZARDS[0][0]
    script = "\n".join([
        f"query S {hazardous.hex()},{CLEAN_SEQUENCES[0].hex()}",
        "advance-clock 60",
        f"query S {CLEAN_SEQUENCES[1].hex()}",
    ])
    result = run_scenario(config, script, seed,
                          name=f"honest-basic-{variant}")
    result.outcome.assertions += agreement_assertions(result.world)
    result.outcome.assertions.append(
        key_slot_uniqueness_assertion(result.world))
    return result


def scenario_honest_exemption(seed: int, variant: str = SCEP
                              ) -> ScenarioResult:
    """Exemption flow: the covered hazard is granted, the uncovered denied."""
    covered = DEFAULT_HAZARDS[0][0]
    uncovered = DEFAULT_HAZARDS[1][0]
    config = ScenarioConfig(scep_variant=variant,
                            elt_sequences=(covered, DEFAULT_HAZARDS[2][0]))
    script = "\n".join([
        f"query-exempt S {covered.hex()},{CLEAN_SEQUENCES[0].hex()} code=fresh",
        "advance-clock 60",
        f"query-exempt S {uncovered.hex()} code=fresh",
    ])
    result = run_scenario(config, script, seed,
                          name=f"honest-exemption-{variant}")
    result.outcome.assertions += agreement_assertions(result.world)
    return result
