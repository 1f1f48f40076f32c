"""Vehicle enquiry client and the fixture-backed mock server it talks to.

Protocol: POST {base_url}/vehicles with body {"registrationNumber": "<plate>"}
returns a vehicle record as JSON. Unknown plates get 404. The mock server
additionally honors an X-Inject-Fault request header ("timeout" or "500")
for client resilience tests and exposes GET /metrics/hits with per-plate
request counts.
"""

from __future__ import annotations

import json
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import requests

from .plate import NormalizedPlate

FUEL_TYPES = ("Gasoline", "Diesel", "Hybrid", "Electric")


class RegistryError(Exception):
    pass


class NotFound(RegistryError):
    """The registry has no record for the plate."""


class Unavailable(RegistryError):
    """Timeouts or 5xx responses persisted past the retry budget."""


class MalformedResponse(RegistryError):
    """The registry answered 200 with a body that violates the schema."""


class BindFailure(RegistryError):
    pass


class FixtureParseError(RegistryError):
    pass


@dataclass(frozen=True)
class VehicleRecord:
    registration: str
    make: str
    model: str
    fuel_type: str
    vehicle_class: str
    co2_g_per_km: float | None = None

    def __post_init__(self):
        if self.co2_g_per_km is not None and self.co2_g_per_km < 0:
            raise ValueError(f"co2_g_per_km must be nonnegative: {self.co2_g_per_km}")
        if self.fuel_type == "Electric" and self.co2_g_per_km not in (None, 0, 0.0):
            raise ValueError("electric vehicles carry zero tailpipe CO2")

    def to_json_dict(self) -> dict:
        out = {
            "registration": self.registration,
            "make": self.make,
            "model": self.model,
            "fuel_type": self.fuel_type,
            "vehicle_class": self.vehicle_class,
        }
        if self.co2_g_per_km is not None:
            out["co2_g_per_km"] = self.co2_g_per_km
        return out

    @classmethod
    def from_json_dict(cls, raw: dict) -> VehicleRecord:
        try:
            co2 = raw.get("co2_g_per_km")
            if co2 is not None and (isinstance(co2, bool) or not isinstance(co2, (int, float))):
                raise ValueError(f"co2_g_per_km must be numeric, got {co2!r}")
            return cls(
                registration=str(raw["registration"]),
                make=str(raw["make"]),
                model=str(raw["model"]),
                fuel_type=str(raw["fuel_type"]),
                vehicle_class=str(raw["vehicle_class"]),
                co2_g_per_km=float(co2) if co2 is not None else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"bad vehicle record: {exc}") from None


@dataclass
class RegistryConfig:
    base_url: str
    timeout_ms: int = 2000
    max_retries: int = 2
    cache_capacity: int = 1024
    cache_ttl_s: float = 300.0
    backoff_base_ms: int = 50

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be nonnegative")


class _TTLCache:
    """LRU cache with per-entry expiry; writes serialized, reads cheap."""

    def __init__(self, capacity: int, ttl_s: float):
        self.capacity = capacity
        self.ttl_s = ttl_s
        self._entries: OrderedDict[str, tuple[float, VehicleRecord]] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key: str) -> VehicleRecord | None:
        with self._lock:
            hit = self._entries.get(key)
            if hit is None:
                return None
            stored_at, record = hit
            if time.monotonic() - stored_at > self.ttl_s:
                del self._entries[key]
                return None
            self._entries.move_to_end(key)
            return record

    def put(self, key: str, record: VehicleRecord) -> None:
        if self.capacity <= 0:
            return
        with self._lock:
            self._entries[key] = (time.monotonic(), record)
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)


class RegistryClient:
    """Caching, retrying lookup client. Safe for concurrent use."""

    def __init__(self, cfg: RegistryConfig, session: requests.Session | None = None):
        self.cfg = cfg
        self._session = session or requests.Session()
        self._cache = _TTLCache(cfg.cache_capacity, cfg.cache_ttl_s)

    def lookup(self, plate: NormalizedPlate, extra_headers: dict[str, str] | None = None) -> VehicleRecord:
        """Resolve one plate, hitting the cache before the network.

        Raises NotFound on 404, Unavailable once timeouts or 5xx responses
        exhaust max_retries (exponential backoff between attempts), and
        MalformedResponse when a 200 body fails validation.
        """
        cached = self._cache.get(plate.text)
        if cached is not None:
            return cached

        url = self.cfg.base_url.rstrip("/") + "/vehicles"
        timeout_s = self.cfg.timeout_ms / 1000.0
        last_failure = "no attempts made"
        for attempt in range(self.cfg.max_retries + 1):
            if attempt > 0:
                time.sleep(self.cfg.backoff_base_ms / 1000.0 * 2 ** (attempt - 1))
            try:
                resp = self._session.post(
                    url,
                    json={"registrationNumber": plate.text},
                    timeout=timeout_s,
                    headers=extra_headers,
                )
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_failure = f"{type(exc).__name__}"
                continue
            if resp.status_code == 404:
                raise NotFound(plate.text)
            if resp.status_code >= 500:
                last_failure = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise MalformedResponse(f"unexpected status {resp.status_code}")
            try:
                record = VehicleRecord.from_json_dict(resp.json())
            except ValueError as exc:
                raise MalformedResponse(f"unparseable body: {exc}") from None
            self._cache.put(plate.text, record)
            return record
        raise Unavailable(f"{plate.text}: {last_failure} after {self.cfg.max_retries + 1} attempts")


def load_fixtures(path: str | Path) -> dict[str, VehicleRecord]:
    """Fixture file: JSON array of vehicle record objects, keyed by plate."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FixtureParseError(str(exc)) from None
    if not isinstance(raw, list):
        raise FixtureParseError("fixture file must be a JSON array")
    fixtures = {}
    for i, entry in enumerate(raw):
        try:
            record = VehicleRecord.from_json_dict(entry)
        except MalformedResponse as exc:
            raise FixtureParseError(f"entry {i}: {exc}") from None
        fixtures[record.registration] = record
    return fixtures


class _MockHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, status: int, payload: dict):
        body = json.dumps(payload).encode("utf-8")
        try:
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            # Client gave up (e.g. during an injected timeout); nothing to do.
            self.close_connection = True

    def do_GET(self):
        if self.path == "/metrics/hits":
            with self.server.lock:
                counts = dict(self.server.hit_counts)
            self._send_json(200, counts)
        else:
            self._send_json(404, {"error": "not found"})

    def do_POST(self):
        if self.path != "/vehicles":
            self._send_json(404, {"error": "not found"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            body = json.loads(self.rfile.read(length).decode("utf-8"))
            plate = body["registrationNumber"]
        except (json.JSONDecodeError, KeyError, UnicodeDecodeError):
            self._send_json(400, {"error": "bad request"})
            return
        with self.server.lock:
            self.server.hit_counts[plate] = self.server.hit_counts.get(plate, 0) + 1

        fault = self.headers.get("X-Inject-Fault", "").strip().lower()
        if fault == "timeout":
            time.sleep(self.server.fault_timeout_s)
        elif fault == "500":
            self._send_json(500, {"error": "injected"})
            return

        record = self.server.fixtures.get(plate)
        if record is None:
            self._send_json(404, {"error": "not found"})
        else:
            self._send_json(200, record.to_json_dict())


class MockRegistryServer:
    """In-process registry stand-in for tests and the serve-mock command."""

    def __init__(
        self,
        fixtures: dict[str, VehicleRecord],
        host: str = "127.0.0.1",
        port: int = 0,
        fault_timeout_s: float = 5.0,
    ):
        self.fixtures = fixtures
        self.hit_counts: dict[str, int] = {}
        self.lock = threading.Lock()
        self.fault_timeout_s = fault_timeout_s
        try:
            self._httpd = ThreadingHTTPServer((host, port), _MockHandler)
        except OSError as exc:
            raise BindFailure(f"{host}:{port}: {exc}") from None
        self._httpd.daemon_threads = True
        # Handler methods reach back through self.server for shared state.
        self._httpd.fixtures = fixtures  # type: ignore[attr-defined]
        self._httpd.hit_counts = self.hit_counts  # type: ignore[attr-defined]
        self._httpd.lock = self.lock  # type: ignore[attr-defined]
        self._httpd.fault_timeout_s = fault_timeout_s  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockRegistryServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self):
        self._httpd.serve_forever()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_mock(fixtures_path: str | Path, host: str = "127.0.0.1", port: int = 0) -> MockRegistryServer:
    """Load fixtures and return a started mock server (caller stops it)."""
    fixtures = load_fixtures(fixtures_path)
    return MockRegistryServer(fixtures, host=host, port=port).start()
