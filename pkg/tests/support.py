"""Shared fixtures: verbatim sub-query pools, worked ranker examples, call builders."""

from __future__ import annotations

from searchgrpo.protocol import FormatFlag
from searchgrpo.retrieval import CandidateSet, Document, RankerCall

# (printed cluster label, sub-query) in printed order, one pool per initial query.
CLUSTER_POOLS_5 = [
    [(0, "who has played the most state of origins"),
     (1, "current record holder for most State of Origin appearances"),
     (2, "most State of Origin appearances"),
     (2, "most appearances in State of Origin")],
    [(0, "host nation of 2004 Summer Olympic Games"),
     (1, "host nation of 2004 Summer Olympics"),
     (1, "host nation of the 2004 Summer Olympics")],
    [(0, "capital of former Soviet Union and country with AGT show"),
     (0, "capital of the former Soviet Union and country with AGT"),
     (1, "Blessed John the Fool-For-Christ birth city"),
     (1, "Blessed John the Fool-For-Christ birth city Azerbaijan"),
     (1, "Blessed John the Fool-For-Christ birth city Baku Azerbaijan")],
    [(0, "The Unbeatables I production country"),
     (1, "The Unbeatables I"),
     (1, "The Unbeatables I produced")],
    [(0, "Charles Dickens The Angel Pub"),
     (0, "Charles Dickens The Angel Pub writings"),
     (0, "Charles Dickens mentioned The Angel Pub"),
     (1, "The Man Who Invented Christmas")],
    [(0, "Naked Obsession"),
     (1, "New York (1916 Film)")],
    [(0, "Standard Chartered Bank headquarters"),
     (1, "Standard Chartered Bank sponsors Hong Kong Marathon")],
    [(0, "when is the sun near Regulus (Alpha Leo) on the calendar"),
     (0, "when is the sun near Regulus (Alpha Leo) on the exact date"),
     (0, "when is the sun near Regulus (Alpha Leo) on the year"),
     (1, "day of the year when the sun is near Regulus (Alpha Leo)"),
     (1, "day of the year when the sun is near Regulus (alpha leo)"),
     (1, "exact day of the year when the Sun is near Regulus (Alpha Leo)")],
    [(0, "who did the congress send to london as a minister in 1784"),
     (1, "who was sent as a minister to london by the congress in 1784"),
     (1, "who was sent as a minister to london in 1784"),
     (1, "who was sent as minister to london by congress in 1784")],
    [(0, "Dark (TV series) 2017 release season"),
     (0, "Dark (TV series) release schedule 2017"),
     (1, "Dark (Netflix German series) season release"),
     (1, "Dark Netflix German series 2017 release season"),
     (1, "Dark Netflix German series release season")],
]

CLUSTER_POOLS_6 = [
    [(0, "The King of Hollywood China Seas"),
     (0, "The King of Hollywood China Seas part"),
     (1, "Clark Gable role in China Seas"),
     (1, "Clark Gable's role in China Seas")],
    [(0, "Izzo (H.O.V.A.) performer record label"),
     (1, "Jay-Z current record label"),
     (1, "Jay-Z record label")],
    [(0, "director of film When A Man Sees Red 1934"),
     (0, "director of film When A Man Sees Red 1934 Pursued"),
     (0, "director of film When A Man Sees Red 1934 version"),
     (1, "Frank Ellis death place"),
     (1, "Frank Ellis place of death"),
     (1, "place of death Frank Ellis")],
    [(0, "Dani Pacheco birth year"),
     (1, "Agnė Čepelytė birth year")],
    [(0, "Embassy of Northern Cyprus in Istanbul operator"),
     (0, "Embassy of Northern Cyprus in Kemerhisar operator"),
     (0, "Embassy of Northern Cyprus in Samsun operator")],
    [(0, "island with community building built 1911-12"),
     (0, "town with an island and a community building built in 1911-12"),
     (0, "town with island and community building built in 1911-12")],
    [(0, "M66 motorway in Lancashire and Greater Manchester"),
     (0, "M66 motorway in Lancashire and Greater Manchester, England")],
    [(0, "who plays the Queen of Hearts in Alice and Wonderland"),
     (0, "who plays the Queen of Hearts in Alice in Wonderland"),
     (0, "who plays the Queen of Hearts in recent Alice in Wonderland films")],
    # printed with a single C=1 label and no C=0 row; not reproducible by any greedy pass
    [(1, "James Komack nationality")],
    [(0, "Market Kitchen presenter Guild of Food Writers award"),
     (0, "Market Kitchen presenter who won Guild of Food Writers award"),
     (0, "Market Kitchen presenter won Guild of Food Writers award")],
]
UNREPRODUCIBLE_POOL_6 = 8

EXAMPLE1_Q0 = "What town has an island with a community building built in 1911-12?"
EXAMPLE1_QT = "island with community building built 1911-12"
EXAMPLE1_GOLD = ["Harpswell"]
EXAMPLE1_DOCS = [
    ("Bailey Island Library Hall",
     "Bailey Island Library Hall (locally just Library Hall) is a historic community building "
     "at 2167 Harpswell Island Road..."),
    ("Bumpkin Island",
     "Bumpkin Island, also known as Round Island, Bomkin Island, Bumkin Island, or Ward's Island, "
     "is an island in the Hingham Bay area of the Bosto..."),
    ("Chocorua Island Chapel",
     "Although the camp had fallen into disrepair by that date, the chapel continued to provide "
     "worship services for visitors and area residents. Ev..."),
    ("Gooden Grant House",
     "octagonal tower with turreted roof projects at the southwest corner, and a "
     "partially-enclosed single-story porch wraps around the west and south sides..."),
    ("Cherry Grove Community House and Theatre",
     "almost 400 other such sites have been identified as candidates. Cherry Grove Community "
     "House and Theatre The Cherry Grove Communit..."),
]
EXAMPLE1_OUTPUT = """<reason>
The Initial Query asks for a town with an island that has a community building built in
1911-12. Passage [1] directly mentions a community building built in 1911-12 and locates
it on Harpswell Island Road, making it the top choice. Passage [48] also fits the criteria
but contains less detailed information. Passages [2], [32] discuss islands but do not
mention a community building from that period. Passage [39] describes a small island with
no matching structure.
</reason>
<rerank>[1] > [48] > [2] > [32] > [39]</rerank>"""

EXAMPLE2_Q0 = "Are Naked Obsession and New York (1916 Film) from the same country?"
EXAMPLE2_QT = "New York (1916 Film)"
EXAMPLE2_GOLD = ["yes"]
EXAMPLE2_DOCS = [
    ("New York (1916 film)",
     "New York (1916 film) New York is a lost 1916 American silent comedy drama film directed by "
     "George Fitzmaurice and starring Florence Reed..."),
    ("New York (1916 film)",
     "thus Oliver King becomes a benedict, and Reel 3 contains two views of a nude model. "
     "New York is a lost 1916 American silent comedy drama film..."),
    ("Lights of New York (1916 film)",
     "Lights of New York is a 1916 American silent drama film directed by Van Dyke Brooke. "
     "Produced by the Vitagrap..."),
    ("Lights of New York (1916 film)",
     "with him anyway. Lights of New York (1916 film) Lights of New York is a 1916 American "
     "silent drama film directed by Van Dyke Brooke..."),
    ("The Pride of New York",
     "German officer and nurse in room where bed is shown including taking nurse to room and "
     "excluding other young woman..."),
]
EXAMPLE2_OUTPUT = """<reason>
The Initial Query asks whether Naked Obsession and New York (1916 Film) are from the same
country. The Sub-Query targets New York (1916 Film). Passages [1] and [2] directly
describe this film and confirm its American origin, making them the top choices. Passages
[3] and [4] describe a different 1916 film (Lights of New York) that is also American but
less directly relevant. Passage [5] discusses yet another unrelated film and ranks lowest.
</reason>
<rerank>[1] > [2] > [3] > [4] > [5]</rerank>"""


def padded_docs(shown, n=50, prefix="d"):
    """The shown candidates followed by filler up to ``n`` (the unshown ones are not in print)."""
    docs = [Document(f"{prefix}{i + 1}", t, x) for i, (t, x) in enumerate(shown)]
    docs += [Document(f"{prefix}{i + 1}", f"Filler {i + 1}", f"unrelated filler passage number {i + 1}")
             for i in range(len(shown), n)]
    return docs


def candidates(docs, sub_query="q", d_plus=(), annotated=True):
    return CandidateSet(sub_query, tuple(docs), tuple(float(len(docs) - i) for i in range(len(docs))),
                        tuple(d_plus), annotated)


def make_call(sub_query, i_ans=0, rollout_index=1, step=1, q0="q0", call_id=None, ranking=(1, 2, 3),
              n=5, flag=None, d_plus=None):
    docs = [Document(f"x{i}", f"t{i}", f"text {i}") for i in range(n)]
    if d_plus is None:
        d_plus = (0,) if i_ans else ()
    cands = candidates(docs, sub_query, d_plus=d_plus)
    return RankerCall(
        call_id=call_id or f"r{rollout_index}/s{step}",
        q0=q0, sub_query=sub_query, candidates=cands, k=len(ranking) if ranking else 3, prompt="", response="",
        ranking=tuple(ranking) if ranking else None, flag=flag or FormatFlag.ok(), rollout_index=rollout_index, step=step,
    )


def pool_calls(pool):
    """One call per sub-query, in printed order, all in the same split."""
    return [make_call(q, rollout_index=i + 1) for i, (_, q) in enumerate(pool)]


class StubServer:
    """Local HTTP stub: ``responder(path, body, headers) -> (status, json_or_text)``; requests are recorded."""

    def __init__(self, responder):
        import http.server
        import json as _json
        import threading

        self.requests = []
        stub = self

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = _json.loads(self.rfile.read(length) or b"null")
                stub.requests.append((self.path, body, dict(self.headers)))
                status, reply = responder(self.path, body, dict(self.headers))
                raw = reply.encode() if isinstance(reply, str) else _json.dumps(reply).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

            def log_message(self, *args):
                pass

        self._server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
