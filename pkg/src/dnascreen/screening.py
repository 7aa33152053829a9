"""Role state machines and the two end-to-end query protocols.

The synthesizer (customer and synthesizer merged into one role) blinds each
order sequence, has a threshold of keyservers apply their key shares, combines
and unblinds the results into keyed hashes, and asks the hashed database
whether each one is listed. The exemption flow adds a second keyserver round
for the exemption-list sequences and ships the ELT chain plus a one-time
device code to the database, which clears listed sequences that the ELT
covers.

Server roles are single-threaded state machines driven one connection at a
time by the simulator; the only cross-connection state is the rate ledger
and the resumption cache.
"""

from dataclasses import dataclass

from . import terms, wire
from .channel import (
    ChannelSession,
    ServerHandshake,
    ServerTlsIdentity,
    channel_recv,
    channel_send,
    handshake_client,
    resume_session,
)
from .crypto import GroupBackend, Scalar, SigningKey, VerifyKey
from .doprf import (
    blind,
    combine,
    doprf_direct,
    eval_share,
    KeyShare,
    random_blinding,
    unblind,
)
from .errors import (
    AuthBackendRejected,
    BadCookie,
    BadEltChain,
    DecodeError,
    InvalidSequence,
    RateLimited,
    ResponseBindingMismatch,
    ScreeningError,
    UnknownDevice,
    raise_remote,
)
from .pki import (
    CertChain,
    Certificate,
    RevocationList,
    TOKEN_EXEMPTION,
    validate_chain,
)
from .scep import (
    Authenticated,
    RateLimitLedger,
    ScepClientSession,
    ScepServerConfig,
    ScepServerSession,
    rate_limit_check,
)
from .terms import Payload

GRANT = "grant"
DENY = "deny"

CLEAR = "clear"
HIT = "hit"
HIT_EXEMPT = "hit-exempt"

DEFAULT_MAX_SEQUENCE_LEN = 30
TOTP_WINDOW_SECONDS = 30


def hashed_seq_label(seq: bytes) -> str:
    """Formal name of the hashed-to-group image of one sequence."""
    return f"M({seq.hex()})"


# --- hazard database -----------------------------------------------------------

class HazardDb:
    """Keyed hashes of the plaintext hazard list; never the plaintext itself."""

    def __init__(self, backend_name: str,
                 entries: dict[bytes, tuple[str, str]] | None = None):
        self.backend_name = backend_name
        self.entries = entries or {}

    def lookup(self, element_bytes: bytes) -> tuple[str, str] | None:
        return self.entries.get(element_bytes)

    def __len__(self):
        return len(self.entries)

    def serialize(self) -> bytes:
        records = [
            wire.pack_fields(e, wire.pack_str(n), wire.pack_str(r))
            for e, (n, r) in sorted(self.entries.items())
        ]
        return wire.pack_fields(b"hazard-db", wire.pack_str(self.backend_name),
                                *records)

    @classmethod
    def deserialize(cls, b: bytes) -> "HazardDb":
        fields_ = wire.unpack_fields(b)
        if not fields_ or fields_[0] != b"hazard-db":
            raise DecodeError("not a hazard db")
        entries = {}
        for rec in fields_[2:]:
            e, n, r = wire.expect_fields(rec, 3)
            entries[e] = (wire.unpack_str(n), wire.unpack_str(r))
        return cls(wire.unpack_str(fields_[1]), entries)


def build_hdb(plaintext_hazards: list[tuple[bytes, str, str]],
              k: Scalar) -> HazardDb:
    """Keyed-hash every plaintext hazard; duplicates collapse to one entry."""
    entries = {}
    for seq, name, reason in plaintext_hazards:
        key = doprf_direct(seq, k).encode()
        if key not in entries:
            entries[key] = (name, reason)
    return HazardDb(k.backend.name, entries)


# --- query messages ------------------------------------------------------------

@dataclass
class ExemptionPart:
    chain_bytes: bytes
    auth_code: str
    hashed_exempt: list  # element encodings


@dataclass
class QueryRequest:
    cookie: bytes
    hashed: list  # element encodings, in order-sequence order
    exemption: ExemptionPart | None = None

    def encode(self) -> bytes:
        ex = b""
        if self.exemption is not None:
            ex = wire.pack_fields(self.exemption.chain_bytes,
                                  wire.pack_str(self.exemption.auth_code),
                                  wire.pack_fields(*self.exemption.hashed_exempt))
        return wire.pack_fields(b"hdb-query", self.cookie,
                                wire.pack_fields(*self.hashed), ex)

    @classmethod
    def decode(cls, plaintext: bytes) -> "QueryRequest":
        tag, cookie, hashed_b, ex_b = wire.expect_fields(plaintext, 4)
        if tag != b"hdb-query":
            raise DecodeError("not an hdb query")
        exemption = None
        if ex_b:
            chain_b, code, ex_hashed = wire.expect_fields(ex_b, 3)
            exemption = ExemptionPart(chain_b, wire.unpack_str(code),
                                      wire.unpack_fields(ex_hashed))
        return cls(cookie, wire.unpack_fields(hashed_b), exemption)


def encode_query_payload(req: QueryRequest, elt_terms=None, ex_terms=None
                         ) -> Payload:
    elt_terms = elt_terms or [terms.element_atom(e) for e in req.hashed]
    parts = [terms.blob(b"hdb-query", "text"), terms.Atom("cookie", req.cookie),
             terms.cat(*elt_terms)]
    if req.exemption is not None:
        ex_terms = ex_terms or [terms.element_atom(e)
                                for e in req.exemption.hashed_exempt]
        parts.append(terms.cat(
            terms.blob(req.exemption.chain_bytes),
            terms.blob(req.exemption.auth_code.encode(), "text"),
            terms.cat(*ex_terms)))
    return Payload(req.encode(), terms.cat(*parts))


@dataclass(frozen=True)
class Verdict:
    flag: str  # clear | hit | hit-exempt
    hazard_name: str = ""
    reason: str = ""


@dataclass
class QueryResponse:
    verdicts: list
    overall: str  # grant | deny

    def encode_core(self) -> bytes:
        recs = [wire.pack_fields(wire.pack_str(v.flag),
                                 wire.pack_str(v.hazard_name),
                                 wire.pack_str(v.reason))
                for v in self.verdicts]
        return wire.pack_fields(b"hdb-resp", wire.pack_str(self.overall), *recs)

    @classmethod
    def decode_core(cls, core: bytes) -> "QueryResponse":
        fields_ = wire.unpack_fields(core)
        if not fields_ or fields_[0] != b"hdb-resp":
            raise DecodeError("not an hdb response")
        verdicts = []
        for rec in fields_[2:]:
            f, n, r = wire.expect_fields(rec, 3)
            verdicts.append(Verdict(wire.unpack_str(f), wire.unpack_str(n),
                                    wire.unpack_str(r)))
        return cls(verdicts, wire.unpack_str(fields_[1]))


def overall_of(verdicts: list) -> str:
    return GRANT if all(v.flag in (CLEAR, HIT_EXEMPT) for v in verdicts) else DENY


# --- database lookup --------------------------------------------------------------

def hdb_lookup(db: HazardDb, request: QueryRequest, ledger: RateLimitLedger,
               now: int, *, expected_cookie: bytes, sigma: bytes, mu: int,
               exemption_root: Certificate | None = None,
               revocations: RevocationList | None = None,
               auth_check=None, include_hazard_info: bool = True
               ) -> QueryResponse:
    """Membership plus exemption flags for one authenticated request.

    ``auth_check(device_id, code, now) -> bool`` consults the authentication
    backend; it is required whenever an exemption part is present.
    """
    if request.cookie != expected_cookie:
        raise BadCookie("query cookie does not match this connection")
    if not rate_limit_check(ledger, sigma, len(request.hashed), now, mu):
        raise RateLimited(f"window budget exceeded for sigma {sigma.hex()}")

    exempt_set = set()
    if request.exemption is not None:
        try:
            chain = CertChain.decode(request.exemption.chain_bytes)
            if exemption_root is None:
                raise BadEltChain("no exemption root configured")
            validate_chain(chain, exemption_root, now,
                           revocations or RevocationList())
            if chain.token is None or chain.token.token_type != TOKEN_EXEMPTION:
                raise BadEltChain("chain does not carry an exemption token")
        except BadEltChain:
            raise
        except Exception as e:
            raise BadEltChain(f"exemption chain rejected: {e}") from None
        if auth_check is None:
            raise AuthBackendRejected("no authentication backend reachable")
        device_id = chain.token.payload.device_id
        if not auth_check(device_id, request.exemption.auth_code, now):
            raise AuthBackendRejected(
                f"device {device_id!r} rejected the one-time code")
        exempt_set = set(request.exemption.hashed_exempt)

    verdicts = []
    for elt in request.hashed:
        meta = db.lookup(elt)
        if meta is None:
            verdicts.append(Verdict(CLEAR))
        elif elt in exempt_set:
            verdicts.append(Verdict(HIT_EXEMPT))
        elif include_hazard_info:
            verdicts.append(Verdict(HIT, meta[0], meta[1]))
        else:
            verdicts.append(Verdict(HIT))
    return QueryResponse(verdicts, overall_of(verdicts))


def oracle_query(order: list, k: Scalar, db: HazardDb,
                 exempt_seqs: tuple = ()) -> QueryResponse:
    """No-network oracle: keyed-hash each sequence directly and scan the db."""
    exempt = {doprf_direct(s, k).encode() for s in exempt_seqs}
    verdicts = []
    for s in order:
        e = doprf_direct(s, k).encode()
        meta = db.lookup(e)
        if meta is None:
            verdicts.append(Verdict(CLEAR))
        elif e in exempt:
            verdicts.append(Verdict(HIT_EXEMPT))
        else:
            verdicts.append(Verdict(HIT, meta[0], meta[1]))
    return QueryResponse(verdicts, overall_of(verdicts))


# --- authentication backend --------------------------------------------------------

def totp_code(device_secret: bytes, timestamp: int) -> str:
    """Six digits from the device secret and the 30-second window index."""
    window = timestamp // TOTP_WINDOW_SECONDS
    h = wire.digest_fields(b"totp", device_secret, wire.pack_u64(window))
    return str(int.from_bytes(h, "big") % 10 ** 6).zfill(6)


def auth_backend_verify(devices: dict, device_id: str, code: str,
                        timestamp: int) -> bool:
    """OK iff the code matches the device's current window. Single window only."""
    secret = devices.get(device_id)
    if secret is None:
        raise UnknownDevice(f"no authenticator registered as {device_id!r}")
    return code == totp_code(secret, timestamp)


# --- wire helpers shared by roles -----------------------------------------------------

def error_payload(err: Exception) -> Payload:
    name = type(err).__name__.encode()
    detail = str(err).encode()
    data = wire.pack_fields(b"error", name, detail)
    return Payload(data, terms.cat(terms.blob(b"error", "text"),
                                   terms.blob(name, "text"),
                                   terms.blob(detail, "text")))


def open_reply(channel: ChannelSession, frame: bytes) -> list:
    """Receive a record, raising remotely-reported errors locally."""
    fields_ = wire.unpack_fields(channel_recv(channel, frame))
    if fields_ and fields_[0] == b"error":
        raise_remote(fields_[1].decode(), fields_[2].decode())
    return fields_


# --- server plumbing ----------------------------------------------------------------

class ServerConnection:
    """One inbound connection: handshake flights, then SCEP, then requests."""

    def __init__(self, role):
        self.role = role
        self.hs = None
        self.channel = None
        self.scep = None
        self.auth: Authenticated | None = None
        self.last_request_plaintext = b""
        self.last_request_term = None

    def handle(self, data: bytes, inbound_term=None) -> Payload | None:
        if self.channel is None:
            return self._handshake_step(data)
        plaintext = channel_recv(self.channel, data)
        if inbound_term is not None and isinstance(inbound_term, terms.Sealed):
            inbound_term = inbound_term.inner
        self.last_request_plaintext = plaintext
        self.last_request_term = inbound_term
        try:
            if self.role.requires_scep and self.auth is None:
                return self._scep_step(plaintext)
            return self._request(plaintext)
        except ScreeningError as err:
            return channel_send(self.channel, error_payload(err))

    def _handshake_step(self, data: bytes) -> Payload:
        fields_ = wire.unpack_fields(data)
        tag = fields_[0] if fields_ else b""
        if tag == b"resume":
            cached = self.role.session_cache.get(fields_[1])
            if cached is None or not self.role.resumption_allowed:
                return Payload(wire.pack_fields(b"resume-reject"),
                               terms.cat(terms.blob(b"resume-reject", "text")))
            self.channel = resume_session(cached)
            self.role.on_channel(self)
            return Payload(wire.pack_fields(b"resume-ok"),
                           terms.cat(terms.blob(b"resume-ok", "text")))
        if tag == b"client-hello":
            self.hs = ServerHandshake(
                self.role.tls_identity, self.role.tls_key, self.role.backend,
                self.role.rng, resumption_allowed=self.role.resumption_allowed)
            return self.hs.receive_client_hello(data)
        if tag == b"client-kex":
            reply = self.hs.receive_client_kex(data)
            self.channel = self.hs.session
            if self.role.resumption_allowed:
                self.role.session_cache[self.channel.session_id()] = self.channel
            self.role.on_channel(self)
            return reply
        raise DecodeError(f"unexpected handshake message {tag!r}")

    def _scep_step(self, plaintext: bytes) -> Payload | None:
        if self.scep is None:
            self.scep = ScepServerSession(self.role.scep_config)
            reply = self.scep.respond(plaintext, self.channel, self.role.rng,
                                      self.role.net.now())
            self.role.on_scep_responded(self)
            return reply
        self.auth = self.scep.verify(plaintext)
        self.role.on_authenticated(self)
        return None

    def _request(self, plaintext: bytes) -> Payload:
        fields_ = wire.unpack_fields(plaintext)
        tag = fields_[0] if fields_ else b""
        handler = self.role.handlers.get(tag)
        if handler is None:
            raise DecodeError(f"no handler for request {tag!r}")
        reply = handler(self, fields_)
        return channel_send(self.channel, reply)


class ServerRole:
    """Shared shape of every network-facing server role."""

    requires_scep = True

    def __init__(self, name: str, backend: GroupBackend,
                 tls_identity: ServerTlsIdentity, tls_key: SigningKey,
                 rng, resumption_allowed: bool = False):
        self.name = name
        self.backend = backend
        self.tls_identity = tls_identity
        self.tls_key = tls_key
        self.rng = rng
        self.resumption_allowed = resumption_allowed
        self.session_cache = {}
        self.net = None  # set at registration
        self.handlers = {}

    def open_connection(self) -> ServerConnection:
        return ServerConnection(self)

    def on_channel(self, conn: ServerConnection):
        if self.net is not None:
            self.net.register_channel(self.name, conn.channel)

    def on_scep_responded(self, conn: ServerConnection):
        if self.net is not None:
            self.net.record_server_session(self.name, conn.scep)

    def on_authenticated(self, conn: ServerConnection):
        if self.net is not None:
            self.net.record_server_authenticated(self.name, conn.scep,
                                                 conn.auth)

    def long_term_key_atoms(self) -> list:
        """Atoms exported to the adversary when this role is corrupted."""
        return [terms.key_atom(self.tls_key.encode())]


class KeyserverRole(ServerRole):
    """Applies its key share to blinded elements, subject to the rate ledger."""

    def __init__(self, name, backend, tls_identity, tls_key,
                 scep_config: ScepServerConfig, share: KeyShare, rng,
                 resumption_allowed=False):
        super().__init__(name, backend, tls_identity, tls_key, rng,
                         resumption_allowed)
        self.scep_config = scep_config
        self.share = share
        self.ledger = RateLimitLedger()
        self.handlers = {b"ks-eval": self._eval}

    def _eval(self, conn: ServerConnection, fields_) -> Payload:
        if len(fields_) < 2:
            raise DecodeError("malformed eval request")
        cookie = fields_[1]
        if cookie != conn.scep.omega:
            raise BadCookie("eval cookie does not match this connection")
        element_bytes = fields_[2:]
        now = self.net.now()
        if not rate_limit_check(self.ledger, conn.auth.sigma,
                                len(element_bytes), now,
                                conn.auth.rate_limit):
            raise RateLimited(
                f"window budget exceeded for sigma {conn.auth.sigma.hex()}")
        out_bytes, out_terms = [], []
        in_terms = _element_terms_of(conn.last_request_term, len(element_bytes))
        for b, t in zip(element_bytes, in_terms):
            elt = self.backend.decode_element(b)
            res = eval_share(self.share, elt).encode()
            out_bytes.append(res)
            out_terms.append(_extend_element_term(t, self.share.value, res))
        data = wire.pack_fields(b"ks-eval-ok", *out_bytes)
        term = terms.cat(terms.blob(b"ks-eval-ok", "text"), *out_terms)
        return Payload(data, term)

    def long_term_key_atoms(self):
        return super().long_term_key_atoms() + [
            terms.key_atom(self.scep_config.signing_key.encode()),
            terms.scalar_atom(self.share.value.encode()),
        ]


def _element_terms_of(request_term, count: int) -> list:
    """Pull the element sub-terms out of an eval-request term, if present."""
    if isinstance(request_term, terms.Cat) and len(request_term.parts) >= 2:
        tail = request_term.parts[2:]
        if len(tail) == count:
            return list(tail)
    return [None] * count


def _extend_element_term(inbound, share_scalar: Scalar, result_bytes: bytes):
    label = terms.atom_label("scalar", share_scalar.encode())
    if isinstance(inbound, terms.ExpTerm):
        factors = tuple(sorted(inbound.factors + ((label, 1),)))
        return terms.ExpTerm(inbound.base, factors, result_bytes)
    if isinstance(inbound, terms.Atom) and inbound.kind == "element":
        return terms.ExpTerm(inbound, ((label, 1),), result_bytes)
    return terms.element_atom(result_bytes)


class HashedDbRole(ServerRole):
    """Holds the keyed-hash database; answers membership and exemption queries."""

    def __init__(self, name, backend, tls_identity, tls_key,
                 scep_config: ScepServerConfig, db: HazardDb, rng, *,
                 exemption_root: Certificate | None = None,
                 elt_revocations: RevocationList | None = None,
                 auth_backend_name: str | None = None,
                 channel_ca_key: VerifyKey | None = None,
                 bind_responses: bool = False,
                 include_hazard_info: bool = True,
                 resumption_allowed: bool = False):
        super().__init__(name, backend, tls_identity, tls_key, rng,
                         resumption_allowed)
        self.scep_config = scep_config
        self.db = db
        self.exemption_root = exemption_root
        self.elt_revocations = elt_revocations or RevocationList()
        self.auth_backend_name = auth_backend_name
        self.channel_ca_key = channel_ca_key
        self.bind_responses = bind_responses
        self.include_hazard_info = include_hazard_info
        self.ledger = RateLimitLedger()
        self.handlers = {b"hdb-query": self._query}

    def _auth_check(self, device_id: str, code: str, now: int) -> bool:
        """One backend round-trip per request; results are never cached."""
        conn = self.net.dial(self.name, self.auth_backend_name)
        session = handshake_client(conn.send, self.auth_backend_name,
                                   self.channel_ca_key, self.backend, self.rng)
        self.net.register_channel(self.name, session)
        req = wire.pack_fields(b"auth-verify", wire.pack_str(device_id),
                               wire.pack_str(code), wire.pack_u64(now))
        term = terms.cat(terms.blob(b"auth-verify", "text"),
                         terms.blob(device_id.encode(), "text"),
                         terms.Atom("code", code.encode()),
                         terms.blob(wire.pack_u64(now), "text"))
        reply = open_reply(session, conn.send(
            channel_send(session, Payload(req, term))))
        return reply[0] == b"auth-ok"

    def _query(self, conn: ServerConnection, fields_) -> Payload:
        request = QueryRequest.decode(conn.last_request_plaintext)
        response = hdb_lookup(
            self.db, request, self.ledger, self.net.now(),
            expected_cookie=conn.scep.omega, sigma=conn.auth.sigma,
            mu=conn.auth.rate_limit, exemption_root=self.exemption_root,
            revocations=self.elt_revocations,
            auth_check=self._auth_check if self.auth_backend_name else None,
            include_hazard_info=self.include_hazard_info)
        core = response.encode_core()
        sig = b""
        if self.bind_responses:
            sig = self.scep_config.signing_key.sign(wire.digest_fields(
                b"response-binding", conn.last_request_plaintext, core))
        data = wire.pack_fields(core, sig)
        term = terms.cat(terms.blob(core), terms.blob(sig))
        return Payload(data, term)

    def long_term_key_atoms(self):
        return super().long_term_key_atoms() + [
            terms.key_atom(self.scep_config.signing_key.encode()),
        ]


class AuthBackendRole(ServerRole):
    """Verifies one-time device codes; reachable over its own channel."""

    requires_scep = False

    def __init__(self, name, backend, tls_identity, tls_key, devices: dict,
                 rng):
        super().__init__(name, backend, tls_identity, tls_key, rng)
        self.devices = devices
        self.handlers = {b"auth-verify": self._verify}

    def _verify(self, conn: ServerConnection, fields_) -> Payload:
        _, dev, code, ts = fields_
        ok = auth_backend_verify(self.devices, wire.unpack_str(dev),
                                 wire.unpack_str(code), wire.unpack_u64(ts))
        tag = b"auth-ok" if ok else b"auth-reject"
        return Payload(wire.pack_fields(tag),
                       terms.cat(terms.blob(tag, "text")))


# --- synthesizer ---------------------------------------------------------------------

@dataclass
class SynthesizerConfig:
    scep_variant: str
    keyservers: list  # dial order; the first `threshold` reachable are used
    hdb: str
    threshold: int
    bind_responses: bool = False
    resumption: bool = False
    max_sequence_len: int = DEFAULT_MAX_SEQUENCE_LEN


@dataclass
class ServerLink:
    """An established, SCEP-authenticated connection to one server."""

    conn: object
    channel: ChannelSession
    scep: ScepClientSession
    server_token: object


class SynthesizerRole:
    """Client role driving the basic and exemption-handling protocols."""

    def __init__(self, name: str, backend: GroupBackend, chain: CertChain,
                 signing_key: SigningKey, trusted_infra_root: Certificate,
                 channel_ca_key: VerifyKey, config: SynthesizerConfig, rng):
        self.name = name
        self.backend = backend
        self.chain = chain
        self.signing_key = signing_key
        self.trusted_infra_root = trusted_infra_root
        self.channel_ca_key = channel_ca_key
        self.config = config
        self.rng = rng
        self.net = None
        self._hdb_session: ChannelSession | None = None

    # -- connection management --

    def _connect(self, server: str, keyserver_extra: bytes = b"",
                 try_resume: bool = False) -> ServerLink:
        net = self.net
        conn = net.dial(self.name, server)
        session = None
        if try_resume and self._hdb_session is not None:
            resumed = None
            try:
                resumed = resume_session(self._hdb_session)
            except Exception as err:
                # Recorded and fall back to a full handshake.
                net.note(f"resumption attempt failed: {type(err).__name__}")
            if resumed is not None:
                sid = self._hdb_session.session_id()
                reply = conn.send(Payload(
                    wire.pack_fields(b"resume", sid),
                    terms.cat(terms.blob(b"resume", "text"), terms.blob(sid))))
                if wire.unpack_fields(reply)[0] == b"resume-ok":
                    session = resumed
                    net.note(f"resumed channel to {server}")
        if session is None:
            session = handshake_client(conn.send, server, self.channel_ca_key,
                                       self.backend, self.rng,
                                       resumption_allowed=self.config.resumption)
        net.register_channel(self.name, session)
        scep_session = ScepClientSession(
            self.config.scep_variant, self.chain, self.signing_key,
            self.trusted_infra_root, self.rng, keyserver_extra=keyserver_extra)
        respond = conn.send(scep_session.hello(session))
        finish = scep_session.finish(channel_recv(session, respond), session,
                                     net.now())
        result = conn.send(finish)
        if result is not None:
            open_reply(session, result)  # only error records come back here
        net.record_client_session(self.name, server, scep_session)
        if server == self.config.hdb:
            self._hdb_session = session
        return ServerLink(conn, session, scep_session,
                          scep_session.server_chain.token)

    def _keyserver_round(self, links: list, blinded: list, blinded_terms: list
                         ) -> list:
        """One eval round against every linked keyserver; returns keyed hashes."""
        responses_by_ks = []
        for link in links:
            req = wire.pack_fields(b"ks-eval", link.scep.cookie,
                                   *[b for b in blinded])
            term = terms.cat(terms.blob(b"ks-eval", "text"),
                             terms.Atom("cookie", link.scep.cookie),
                             *blinded_terms)
            reply = open_reply(link.channel,
                               link.conn.send(channel_send(link.channel,
                                                           Payload(req, term))))
            if reply[0] != b"ks-eval-ok":
                raise DecodeError("unexpected keyserver reply")
            index = link.server_token.payload.share_index
            responses_by_ks.append((index, reply[1:]))
        return responses_by_ks

    def _assemble(self, responses_by_ks: list, count: int, beta) -> list:
        keyed = []
        for j in range(count):
            parts = [(idx, self.backend.decode_element(vals[j]))
                     for idx, vals in responses_by_ks]
            keyed.append(unblind(combine(parts, self.config.threshold),
                                 beta).encode())
        return keyed

    def _blind_batch(self, sequences: list, beta):
        beta_label = terms.atom_label("scalar", beta.encode())
        blinded, bterms = [], []
        for s in sequences:
            h = self.backend.hash_to_group(s)
            b = blind(h, beta)
            blinded.append(b.encode())
            # provenance-labelled base atom: the closure judges element
            # secrets by formal identity, not by value collisions in the
            # tiny test group
            base = terms.Atom("element", h.encode(), label=hashed_seq_label(s))
            bterms.append(terms.ExpTerm(base, ((beta_label, 1),), b.encode()))
        return blinded, bterms

    def _check_order(self, order: list):
        for s in order:
            if not s or len(s) > self.config.max_sequence_len:
                raise InvalidSequence(
                    f"sequence length {len(s)} outside (0, "
                    f"{self.config.max_sequence_len}]")

    def _hdb_round(self, link: ServerLink, request: QueryRequest,
                   elt_terms, ex_terms) -> QueryResponse:
        payload = encode_query_payload(request, elt_terms, ex_terms)
        request_bytes = payload.data
        reply = open_reply(link.channel,
                           link.conn.send(channel_send(link.channel, payload)))
        # open_reply unpacked (core, sig)
        core, sig = reply[0], reply[1] if len(reply) > 1 else b""
        if self.config.bind_responses:
            expected = wire.digest_fields(b"response-binding", request_bytes,
                                          core)
            if not sig or not link.server_token.subject_key.verify(expected,
                                                                   sig):
                raise ResponseBindingMismatch(
                    "response is not bound to this query")
        return QueryResponse.decode_core(core)

    # -- the two protocols --

    def basic_query(self, order: list, resume_hdb: bool = False
                    ) -> QueryResponse:
        self._check_order(order)
        beta = random_blinding(self.backend, self.rng)
        blinded, bterms = self._blind_batch(order, beta)
        links = [self._connect(n, keyserver_extra=b"keyserver " + n.encode())
                 for n in self.config.keyservers[: self.config.threshold]]
        keyed = self._assemble(self._keyserver_round(links, blinded, bterms),
                               len(order), beta)
        hdb = self._connect(self.config.hdb, try_resume=resume_hdb)
        request = QueryRequest(hdb.scep.cookie, keyed)
        return self._hdb_round(hdb, request,
                               [terms.element_atom(e) for e in keyed], None)

    def exemption_query(self, order: list, elt_chain: CertChain,
                        auth_code: str, resume_hdb: bool = False
                        ) -> QueryResponse:
        self._check_order(order)
        exempt_seqs = list(elt_chain.token.payload.sequences)
        beta = random_blinding(self.backend, self.rng)
        blinded, bterms = self._blind_batch(order, beta)
        ex_blinded, ex_bterms = self._blind_batch(exempt_seqs, beta)
        links = [self._connect(n, keyserver_extra=b"keyserver " + n.encode())
                 for n in self.config.keyservers[: self.config.threshold]]
        keyed = self._assemble(self._keyserver_round(links, blinded, bterms),
                               len(order), beta)
        ex_keyed = self._assemble(
            self._keyserver_round(links, ex_blinded, ex_bterms),
            len(exempt_seqs), beta)
        hdb = self._connect(self.config.hdb, try_resume=resume_hdb)
        request = QueryRequest(
            hdb.scep.cookie, keyed,
            ExemptionPart(elt_chain.encode(), auth_code, ex_keyed))
        return self._hdb_round(hdb, request,
                               [terms.element_atom(e) for e in keyed],
                               [terms.element_atom(e) for e in ex_keyed])
