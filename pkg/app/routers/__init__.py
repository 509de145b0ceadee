# HTTP routers: solve runs, convergence studies, mesh inspection
