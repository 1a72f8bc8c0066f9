# app/main.py

from fastapi import FastAPI, Request, status
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.exceptions import RequestValidationError
from contextlib import asynccontextmanager
import time

from app.config import settings
from app.database import create_db_and_tables
from app.exceptions import ConfigError, InsufficientData, QRNGError
from app.logging_config import configure_logging, get_logger

# Importa todas as rotas
from app.routers import device, metrics, runs, selftest, tuner

logger = get_logger("api")


# Eventos de Lifespan

@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    Gerencia eventos de inicialização e encerramento da aplicação.

    Startup:
    - Configura o logging
    - Cria as tabelas de relatórios

    Shutdown:
    - Só registra o encerramento
    """
    configure_logging(settings.log_level)
    logger.info("iniciando %s %s", settings.app_name, settings.app_version)
    logger.info("database: %s", settings.database_url)

    create_db_and_tables()
    logger.info("tabelas criadas/verificadas")

    yield

    logger.info("encerrando %s", settings.app_name)


# Instância do FastAPI
app = FastAPI(
    title=settings.app_name,
    version=settings.app_version,
    description="""
    Gêmeo digital de um QRNG com interferômetro de Sagnac sintonizável.

    Funcionalidades

    Dispositivo: config calibrada e probabilidades fechadas por tensão
    Tuner: sweeps de tensão e otimização da entropia bruta
    Self-test: protocolo prepare-and-measure com visibilidades e alarmes
    Métricas: entropia de Shannon e min-entropia de bytes enviados
    Execuções: relatórios gravados pelo comando `run` da CLI

    A geração em volume roda pela CLI (`python -m app.cli run ...`);
    a API só navega relatórios e roda simulações pequenas.
    """,
    docs_url="/docs",
    redoc_url="/redoc",
    openapi_url="/openapi.json",
    lifespan=lifespan,
    debug=settings.debug,
    license_info={
        "name": "MIT License",
        "url": "https://opensource.org/licenses/MIT",
    },
    openapi_tags=[
        {"name": "device", "description": "Parâmetros e modelo fechado do dispositivo"},
        {"name": "tuner", "description": "Sweeps de tensão e ponto de operação"},
        {"name": "selftest", "description": "Visibilidades dos estados de auditoria"},
        {"name": "metrics", "description": "Estimadores de entropia"},
        {"name": "runs", "description": "Execuções gravadas do pipeline"},
    ]
)

# Cors
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.cors_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# Request Timing

@app.middleware("http")
async def add_process_time_header(request: Request, call_next):
    """
    Adiciona header X-Process-Time com o tempo de processamento da requisição.
    Simulações sob demanda são as rotas mais lentas.
    """
    start_time = time.time()
    response = await call_next(request)
    process_time = time.time() - start_time
    response.headers["X-Process-Time"] = str(round(process_time * 1000, 2)) + "ms"
    return response


# Exception Handlers

@app.exception_handler(RequestValidationError)
async def validation_exception_handler(request: Request, exc: RequestValidationError):
    """
    Handler customizado para tratamento de erros de validação.
    Um item por campo inválido.
    """
    errors = []
    for error in exc.errors():
        errors.append({
            "field": "->".join(str(loc) for loc in error["loc"]),
            "message": error["msg"],
            "type": error["type"]
        })
    return JSONResponse(
        status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
        content={
            "detail": "Erro de validação",
            "errors": errors
        }
    )


@app.exception_handler(QRNGError)
async def qrng_exception_handler(request: Request, exc: QRNGError):
    """
    Erros do domínio: config/entrada inválida vira 422, o resto 400.
    """
    code = status.HTTP_400_BAD_REQUEST
    if isinstance(exc, (ConfigError, InsufficientData)):
        code = status.HTTP_422_UNPROCESSABLE_ENTITY
    logger.warning("%s em %s: %s", type(exc).__name__, request.url.path, exc)
    return JSONResponse(
        status_code=code,
        content={"detail": str(exc), "type": type(exc).__name__}
    )


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    """
    Handler global para exceções não tratadas.
    Em produção, não expõe detalhes internos
    """
    logger.exception("erro não tratado em %s", request.url.path)
    if settings.debug:
        return JSONResponse(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            content={
                "detail": "Erro interno do servidor",
                "error": str(exc),
                "type": type(exc).__name__
            }
        )
    return JSONResponse(
        status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
        content={
            "detail": "Erro interno do servidor. Por favor, tente novamente."
        }
    )


# Routers (Todas elas)

app.include_router(device.router, prefix="/api")
app.include_router(tuner.router, prefix="/api")
app.include_router(selftest.router, prefix="/api")
app.include_router(metrics.router, prefix="/api")
app.include_router(runs.router, prefix="/api")


# Root

@app.get("/", tags=["Root"])
def root():
    """
    Endpoint raiz da API.
    Retorna informações básicas e links úteis.
    """
    return {
        "message": f"{settings.app_name}",
        "version": settings.app_version,
        "docs": "/docs",
        "redoc": "/redoc",
        "openapi": "/openapi.json",
        "endpoints": {
            "device": "/api/device",
            "tuner": "/api/tuner",
            "selftest": "/api/selftest",
            "metrics": "/api/metrics",
            "runs": "/api/runs"
        }
    }


@app.get("/health", tags=["Root"])
def health_check():
    """
    Endpoint de health check.
    Útil para monitoramento e load balancers.
    """
    return {
        "status": "healthy",
        "version": settings.app_version,
        "database": "connected"
    }


@app.get("/api", tags=["Root"])
def api_info():
    # Informações sobre a API
    return {
        "name": settings.app_name,
        "version": settings.app_version,
        "description": "Gêmeo digital de QRNG (Sagnac sintonizável)",
        "endpoints": {
            "device": {
                "default": "GET /api/device/default",
                "probabilities": "POST /api/device/probabilities?v={volts}"
            },
            "tuner": {
                "sweep": "POST /api/tuner/sweep",
                "optimize": "POST /api/tuner/optimize"
            },
            "selftest": {
                "run": "POST /api/selftest"
            },
            "metrics": {
                "entropy": "POST /api/metrics/entropy"
            },
            "runs": {
                "list": "GET /api/runs",
                "get": "GET /api/runs/{id}",
                "sweep": "GET /api/runs/{id}/sweep",
                "visibility": "GET /api/runs/{id}/visibility"
            }
        }
    }


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(
        "app.main:app",
        host="0.0.0.0",
        port=8000,
        reload=settings.debug,
        log_level="info"
    )
