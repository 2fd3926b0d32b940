"""
Flask API server for a trained NL-RLDA model
Scores observations and exposes the risk curve of the loaded model
"""

import logging
from dataclasses import replace
from typing import Optional

import numpy as np
from flask import Flask, jsonify, request
from flask_cors import CORS

from classifier import TrainedModel, load_model, predict_scores
from errors import DegenerateError, InputError, RLDAError
from risk import risk_point
from settings import configure_logging, load_runtime_settings

logger = logging.getLogger(__name__)


def _status_for(error: RLDAError) -> int:
    if isinstance(error, InputError):
        return 400
    if isinstance(error, DegenerateError):
        return 422
    return 500


def _failure(error: Exception, code: int):
    return jsonify({'success': False, 'error': str(error), 'type': type(error).__name__}), code


def create_app(model: Optional[TrainedModel] = None, model_path: Optional[str] = None) -> Flask:
    """App serving an in-memory model or one loaded from model_path; with neither, model routes return 503"""
    app = Flask(__name__)
    CORS(app, origins="*", allow_headers=["Content-Type"], methods=["GET", "POST", "OPTIONS"])

    if model is None and model_path:
        model = load_model(model_path)
    state = {'model': model, 'path': model_path}

    # Scores depend on the loaded model; never cache
    @app.after_request
    def after_request(response):
        response.headers["Cache-Control"] = "no-cache, no-store, must-revalidate"
        response.headers["Pragma"] = "no-cache"
        response.headers["Expires"] = "0"
        return response

    def current_model() -> TrainedModel:
        if state['model'] is None:
            raise LookupError("No model loaded")
        return state['model']

    @app.route('/api/health', methods=['GET'])
    def health():
        """Health check"""
        return jsonify({
            'status': 'ok',
            'model_loaded': state['model'] is not None,
        })

    @app.route('/api/model', methods=['GET'])
    def model_summary():
        """Summary of the loaded model"""
        try:
            return jsonify({'success': True, 'model': current_model().summary()})
        except LookupError as e:
            return _failure(e, 503)

    @app.route('/api/predict', methods=['POST'])
    def predict():
        """
        Score observations
        Body: {"features": [[x_1, ..., x_p], ...]} (one row per observation)
        """
        data = request.get_json(silent=True) or {}
        rows = data.get('features')
        if rows is None:
            return jsonify({'success': False, 'error': 'features required'}), 400

        try:
            trained = current_model()
            X = np.asarray(rows, dtype=float)
            if X.ndim == 1:
                X = X[None, :]
            scores, labels = predict_scores(trained, X.T)
            return jsonify({
                'success': True,
                'scores': [float(s) for s in scores],
                'labels': [int(v) for v in labels],
            })
        except LookupError as e:
            return _failure(e, 503)
        except (TypeError, ValueError) as e:
            return _failure(e, 400)
        except RLDAError as e:
            return _failure(e, _status_for(e))
        except Exception as e:
            logger.exception("Prediction failed")
            return _failure(e, 500)

    @app.route('/api/risk-curve', methods=['GET'])
    def risk_curve():
        """Risk estimate on the training grid of the loaded model"""
        try:
            trained = current_model()
            points = [
                {
                    'gamma': pt.gamma,
                    'eps_hat': None if pt.degenerate else pt.eps_hat,
                    'eps0_hat': None if pt.degenerate else pt.eps0_hat,
                    'eps1_hat': None if pt.degenerate else pt.eps1_hat,
                    'degenerate': pt.degenerate,
                }
                for pt in trained.risk_curve
            ]
            return jsonify({'success': True, 'gamma_star': trained.gamma_star, 'points': points})
        except LookupError as e:
            return _failure(e, 503)

    @app.route('/api/risk', methods=['POST'])
    def risk_at():
        """
        Risk estimate of the nonlinear classifier at one gamma
        Body: {"gamma": 1.5, "e_numerator": "appendix", "formulas": "standard"}
        Settings the body omits come from the model's own risk settings.
        """
        data = request.get_json(silent=True) or {}
        if 'gamma' not in data:
            return jsonify({'success': False, 'error': 'gamma required'}), 400

        try:
            trained = current_model()
            gamma = float(data['gamma'])
            if not np.isfinite(gamma) or gamma <= 0:
                return jsonify({'success': False, 'error': 'gamma must be positive and finite'}), 400
            overrides = {key: data[key] for key in ('e_numerator', 'formulas') if key in data}
            settings = replace(trained.settings, **overrides)
            pt = risk_point(trained.eig, trained.stats.m, gamma, trained.n0, trained.n1, settings)
            if pt.degenerate:
                return jsonify({'success': False, 'error': pt.reason, 'degenerate': True}), 422
            return jsonify({
                'success': True,
                'gamma': pt.gamma,
                'eps_hat': pt.eps_hat,
                'eps0_hat': pt.eps0_hat,
                'eps1_hat': pt.eps1_hat,
            })
        except LookupError as e:
            return _failure(e, 503)
        except (TypeError, ValueError) as e:
            return _failure(e, 400)
        except RLDAError as e:
            return _failure(e, _status_for(e))
        except Exception as e:
            logger.exception("Risk evaluation failed")
            return _failure(e, 500)

    return app


def _app_from_environment() -> Flask:
    runtime = load_runtime_settings()
    configure_logging(runtime.log_level)
    try:
        return create_app(model_path=runtime.model_path)
    except RLDAError as e:
        logger.error("Could not load model from %s: %s", runtime.model_path, e)
        return create_app()


app = _app_from_environment()


if __name__ == '__main__':
    port = load_runtime_settings().port
    # Disable Flask's automatic dotenv loading; settings already read .env
    import flask.cli
    flask.cli.load_dotenv = lambda *args, **kwargs: None
    app.run(debug=False, host='0.0.0.0', port=port)
