#include "aquatwin/network.hpp"

namespace aquatwin {

namespace {

// Canonical Hanoi layout and demands (converted from m3/h to L/s). Pipe
// diameters are a published least-cost feasible design.
constexpr std::string_view kHanoiInp = R"INP([TITLE]
Hanoi water distribution network (Fujiwara and Khang 1990)

[JUNCTIONS]
;ID	Elev	Demand	Pattern
2	0	247.2222
3	0	236.1111
4	0	36.1111
5	0	201.3889
6	0	279.1667
7	0	375.0000
8	0	152.7778
9	0	145.8333
10	0	145.8333
11	0	138.8889
12	0	155.5556
13	0	261.1111
14	0	170.8333
15	0	77.7778
16	0	86.1111
17	0	240.2778
18	0	373.6111
19	0	16.6667
20	0	354.1667
21	0	258.3333
22	0	134.7222
23	0	290.2778
24	0	227.7778
25	0	47.2222
26	0	250.0000
27	0	102.7778
28	0	80.5556
29	0	100.0000
30	0	100.0000
31	0	29.1667
32	0	223.6111

[RESERVOIRS]
;ID	Head	Pattern
1	100

[PIPES]
;ID	Node1	Node2	Length	Diameter	Roughness	MinorLoss	Status
1	1	2	100	1016	130	0	Open
2	2	3	1350	1016	130	0	Open
3	3	4	900	1016	130	0	Open
4	4	5	1150	1016	130	0	Open
5	5	6	1450	1016	130	0	Open
6	6	7	450	1016	130	0	Open
7	7	8	850	1016	130	0	Open
8	8	9	850	1016	130	0	Open
9	9	10	800	1016	130	0	Open
10	10	11	950	762	130	0	Open
11	11	12	1200	609.6	130	0	Open
12	12	13	3500	609.6	130	0	Open
13	10	14	800	508	130	0	Open
14	14	15	500	406.4	130	0	Open
15	15	16	550	304.8	130	0	Open
16	16	17	2730	304.8	130	0	Open
17	17	18	1750	406.4	130	0	Open
18	18	19	800	508	130	0	Open
19	19	3	400	508	130	0	Open
20	3	20	2200	1016	130	0	Open
21	20	21	1500	508	130	0	Open
22	21	22	500	304.8	130	0	Open
23	20	23	2650	1016	130	0	Open
24	23	24	1230	762	130	0	Open
25	24	25	1300	762	130	0	Open
26	25	26	850	508	130	0	Open
27	26	27	300	304.8	130	0	Open
28	27	16	750	304.8	130	0	Open
29	23	28	1500	406.4	130	0	Open
30	28	29	2000	304.8	130	0	Open
31	29	30	1600	304.8	130	0	Open
32	30	31	150	304.8	130	0	Open
33	31	32	860	406.4	130	0	Open
34	32	25	950	508	130	0	Open

[OPTIONS]
Units	LPS
Headloss	H-W

[END]
)INP";

}  // namespace

std::string_view hanoi_inp_text() { return kHanoiInp; }

NetworkModel hanoi_builtin() { return parse_inp(kHanoiInp); }

}  // namespace aquatwin
