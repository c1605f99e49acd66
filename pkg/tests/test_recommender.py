import json
import math
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posterloop.errors import EmptyRetrieval, InvalidLayout, MalformedResponse, TransportError
from posterloop.geometry import (
    BBox,
    Element,
    ElementType,
    Layout,
    ProtectedRegion,
    intersection_area,
    layout_to_dict,
    validate_layout,
)
from posterloop.recommender import (
    CallableTransport,
    CostWeights,
    ProposalRequest,
    SearchBudget,
    Transport,
    cost,
    external_propose,
    local_search,
    parse_response,
    propose_initial,
)
from posterloop.retrieval import CorpusEntry, Embedding

import oracles
from strategies import grid_layouts

T, L, U = ElementType.TEXT, ElementType.LOGO, ElementType.UNDERLAY


def lay(*items, canvas=(100, 100)):
    return Layout(*canvas, tuple(Element(f"e{i}", k, BBox(*b)) for i, (k, b) in enumerate(items)))


def corpus_entry(layout, eid="x"):
    return CorpusEntry(eid, None, layout, Embedding(eid, (1.0, 0.0)))


EXEMPLAR = lay((U, (0.1, 0.1, 0.8, 0.4)), (T, (0.2, 0.2, 0.4, 0.08)), (T, (0.2, 0.35, 0.3, 0.05)), canvas=(500, 700))


class TestCost:
    def test_empty(self):
        c = cost(Layout(10, 10))
        assert (c.c_overlap, c.c_alignment, c.c_margins, c.total) == (0, 0, 0, 0)

    def test_clean_pair_costs_nothing(self):
        c = cost(lay((T, (0.1, 0.1, 0.3, 0.1)), (T, (0.1, 0.5, 0.2, 0.1))))
        assert c.total == 0.0

    def test_identical_centered_boxes(self):
        layout = lay((T, (0.4, 0.4, 0.2, 0.2)), (T, (0.4, 0.4, 0.2, 0.2)))
        c = cost(layout, CostWeights(1.0, 0.5, 0.5, 0.02))
        # intersection 0.04 over total area 0.08; all axes coincide; far from edges; gap negative
        assert c.c_overlap == pytest.approx(0.5)
        assert c.c_alignment == 0.0
        assert c.c_margins == 0.0
        assert c.total >= 0.5

    def test_margin_terms(self):
        # gap 0.01 between the boxes and one box 0.005 from the left edge
        layout = lay((T, (0.005, 0.1, 0.2, 0.1)), (T, (0.215, 0.1, 0.2, 0.1)))
        c = cost(layout, CostWeights(0.0, 0.0, 1.0, 0.02))
        assert c.c_margins == pytest.approx((0.02 - 0.01) + (0.02 - 0.005), abs=1e-12)

    def test_omega_term(self):
        layout = lay((T, (0.0, 0.0, 0.5, 0.5)))
        omega = ProtectedRegion(BBox(0.25, 0.25, 0.5, 0.5))
        c = cost(layout, CostWeights(0.0, 0.0, 1.0, 0.0), omega)
        assert c.c_margins == pytest.approx(0.25)

    def test_stacked_boxes_keep_growing(self):
        stack = lambda n: lay(*[(T, (0.3, 0.3, 0.2, 0.2))] * n)
        assert cost(stack(4)).c_overlap == pytest.approx(1.5)
        assert cost(stack(4)).c_overlap > cost(stack(3)).c_overlap

    def test_invalid_layout(self):
        with pytest.raises(InvalidLayout):
            cost(lay((T, (0.9, 0.0, 0.3, 0.1))))

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            CostWeights(0, 0, 0)
        with pytest.raises(ValueError):
            CostWeights(margin=0.3)

    @given(grid_layouts(), st.tuples(*[st.floats(0, 3)] * 3).filter(lambda a: any(a)))
    def test_total_is_weighted_sum(self, layout, alphas):
        w = CostWeights(*alphas)
        c = cost(layout, w)
        assert c.total == w.alpha_overlap * c.c_overlap + w.alpha_alignment * c.c_alignment + w.alpha_margins * c.c_margins
        assert min(c.c_overlap, c.c_alignment, c.c_margins) >= 0


class TestProposeInitial:
    def test_copies_types_and_boxes(self):
        got = propose_initial(500, 700, [corpus_entry(EXEMPLAR)])
        assert [e.kind for e in got.elements] == [U, T, T]
        assert got.boxes == EXEMPLAR.boxes
        assert [e.id for e in got.elements] == ["underlay-0", "text-0", "text-1"]

    def test_canvas_rescale_keeps_normalized_boxes(self):
        got = propose_initial(1000, 1400, [corpus_entry(EXEMPLAR)])
        assert (got.canvas_w, got.canvas_h) == (1000, 1400)
        assert got.boxes == EXEMPLAR.boxes

    def test_aspect_change(self):
        got = propose_initial(1400, 350, [corpus_entry(EXEMPLAR)])
        assert got.boxes == EXEMPLAR.boxes
        assert validate_layout(got) == []
        assert math.isfinite(cost(got).total)

    def test_underlays_move_first(self):
        ex = lay((T, (0.2, 0.2, 0.1, 0.1)), (U, (0.1, 0.1, 0.5, 0.5)))
        got = propose_initial(100, 100, [corpus_entry(ex)])
        assert [e.kind for e in got.elements] == [U, T]

    def test_empty(self):
        with pytest.raises(EmptyRetrieval):
            propose_initial(10, 10, [])


class TestLocalSearch:
    def test_zero_cost_unchanged(self):
        l0 = lay((T, (0.1, 0.1, 0.3, 0.1)), (T, (0.1, 0.5, 0.2, 0.1)))
        assert local_search(l0) == l0

    def test_resolves_full_overlap(self):
        l0 = lay((T, (0.4, 0.4, 0.2, 0.2)), (T, (0.4, 0.4, 0.2, 0.2)))
        out = local_search(l0, CostWeights(1.0, 0.0, 0.0), SearchBudget(20000, 1))
        a, b = out.boxes
        assert oracles.common_cells(a, b, 1000) == 0
        assert cost(out, CostWeights(1.0, 0.0, 0.0)).c_overlap == 0.0

    def test_deterministic(self):
        l0 = lay((U, (0.1, 0.1, 0.7, 0.5)), (T, (0.15, 0.2, 0.3, 0.1)), (T, (0.2, 0.25, 0.3, 0.1)))
        b = SearchBudget(3000, 42)
        assert local_search(l0, budget=b) == local_search(l0, budget=b)

    def test_omega_not_entered(self):
        omega = ProtectedRegion(BBox(0.45, 0.0, 0.1, 1.0))
        l0 = lay((T, (0.2, 0.4, 0.2, 0.2)), (T, (0.25, 0.45, 0.2, 0.2)))
        out = local_search(l0, CostWeights(1.0, 0.5, 0.5), SearchBudget(5000, 3), omega)
        for before, after in zip(l0.boxes, out.boxes):
            assert intersection_area(after, omega.region) <= intersection_area(before, omega.region)

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            SearchBudget(0)
        with pytest.raises(ValueError):
            SearchBudget(step_sizes=(0.01, 0.02))

    def test_invalid_input(self):
        with pytest.raises(InvalidLayout):
            local_search(lay((T, (0.0, 0.0, 0.0, 0.1))))

    @settings(max_examples=40, deadline=None)
    @given(grid_layouts(max_elements=4), st.integers(0, 2**63 - 1))
    def test_monotone_and_shape_preserving(self, l0, seed):
        budget = SearchBudget(800, seed)
        out = local_search(l0, CostWeights(), budget)
        assert cost(out).total <= cost(l0).total
        assert [(e.id, e.kind) for e in out.elements] == [(e.id, e.kind) for e in l0.elements]
        assert validate_layout(out) == []


# ---------------------------------------------------------------------------
# External channel


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.server.requests.append(body)
        mode = self.server.mode
        if mode == "slow":
            time.sleep(1.0)
        if mode == "count":
            with self.server.lock:
                self.server.active += 1
                self.server.peak = max(self.server.peak, self.server.active)
            time.sleep(0.1)
            with self.server.lock:
                self.server.active -= 1
        if mode == "error":
            self.send_response(500)
            self.end_headers()
            return
        if mode == "negative":
            doc = layout_to_dict(EXEMPLAR)
            doc["elements"][1]["bbox"][2] = -0.1
            payload = json.dumps(doc).encode()
        elif mode == "garbage":
            payload = b"{not json"
        else:
            ex = body["examples"][0]
            ex["canvas"] = body["canvas"]
            payload = json.dumps(ex).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    srv.requests, srv.mode = [], "echo"
    srv.lock, srv.active, srv.peak = threading.Lock(), 0, 0
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def _request():
    return ProposalRequest(500, 700, (EXEMPLAR,))


class TestExternal:
    def test_well_formed(self, server):
        t = Transport(f"http://127.0.0.1:{server.server_port}/", timeout=5)
        p = external_propose(_request(), t, [corpus_entry(EXEMPLAR)])
        assert p.source == "external" and p.fallback_reason is None
        assert p.layout.boxes == EXEMPLAR.boxes
        sent = server.requests[0]
        assert sent["canvas"] == {"width": 500, "height": 700}
        assert set(sent) == {"canvas", "examples", "instructions"}

    @pytest.mark.parametrize("mode", ["negative", "garbage", "error"])
    def test_bad_responses_fall_back(self, server, mode):
        server.mode = mode
        t = Transport(f"http://127.0.0.1:{server.server_port}/", timeout=5)
        p = external_propose(_request(), t, [corpus_entry(EXEMPLAR)], budget=SearchBudget(500))
        assert p.source == "local"
        assert p.fallback_reason
        assert validate_layout(p.layout) == []

    def test_timeout_falls_back(self, server):
        server.mode = "slow"
        t = Transport(f"http://127.0.0.1:{server.server_port}/", timeout=0.2)
        p = external_propose(_request(), t, [corpus_entry(EXEMPLAR)], budget=SearchBudget(500))
        assert p.source == "local"
        assert "timeout" in p.fallback_reason

    def test_unreachable_endpoint(self):
        t = Transport("http://127.0.0.1:9/", timeout=0.5)
        with pytest.raises(TransportError):
            t.send({})

    def test_concurrency_bound(self, server):
        server.mode = "count"
        t = Transport(f"http://127.0.0.1:{server.server_port}/", timeout=5, max_concurrent=2)
        threads = [threading.Thread(target=t.send, args=(_request().to_dict(),)) for _ in range(8)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert len(server.requests) == 8
        assert server.peak == 2

    def test_callable_transport_wraps_errors(self):
        def boom(_):
            raise RuntimeError("nope")

        with pytest.raises(TransportError):
            CallableTransport(boom).send({})

    def test_parse_response_clamps(self):
        doc = layout_to_dict(lay((T, (0.9, 0.9, 0.2, 0.2))))
        got = parse_response(json.dumps(doc).encode(), 300, 300)
        assert got.boxes[0].as_list() == pytest.approx([0.8, 0.8, 0.2, 0.2])
        assert (got.canvas_w, got.canvas_h) == (300, 300)

    def test_parse_response_rejects_duplicates(self):
        doc = layout_to_dict(lay((T, (0.1, 0.1, 0.2, 0.2)), (T, (0.5, 0.5, 0.2, 0.2))))
        doc["elements"][1]["id"] = doc["elements"][0]["id"]
        with pytest.raises(MalformedResponse):
            parse_response(json.dumps(doc).encode(), 100, 100)

